//! Generate the synthetic three-source benchmark and write it as CSV.
//!
//! Run with: cargo run --example generate_data

use stradiff::csvio;
use stradiff::datagen::{generate, ExperimentSpec, MixingKind};
use stradiff::tensor::Shape;

fn main() -> stradiff::Result<()> {
    let spec = ExperimentSpec {
        t_len: 400,
        n: 3,
        m: 3,
        mixing_kind: MixingKind::Linear,
        noise_std: 0.0,
        seed: 7,
    };
    let (sources, mixture, truth) = generate(&spec)?;

    let dir = std::path::Path::new("out/example_data");
    std::fs::create_dir_all(dir).map_err(|e| stradiff::StradiffError::io(dir.display().to_string(), e))?;
    csvio::write_time_matrix(&dir.join("sources.csv"), "s", &sources)?;
    csvio::write_time_matrix(&dir.join("mixture.csv"), "y", &mixture)?;
    csvio::write_matrix(&dir.join("mixing.csv"), "a", &truth.a)?;

    let (t_len, n) = match sources.shape {
        Shape::Matrix(t, n) => (t, n),
        _ => unreachable!(),
    };
    println!("wrote {t_len}x{n} sources and their mixture to {}", dir.display());

    // Each source is standardized; the mixing matrix has unit-norm columns.
    for j in 0..n {
        let col: Vec<f64> = (0..t_len).map(|i| sources.at(i, j)).collect();
        let mean = col.iter().sum::<f64>() / t_len as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t_len as f64;
        println!("source {}: mean {mean:+.2e}, std {:.6}", j + 1, var.sqrt());
    }
    Ok(())
}
