//! Train the separator on a small linear mixture and watch the losses and
//! matched correlations evolve.
//!
//! Run with: cargo run --example train_linear

use stradiff::datagen::{generate, ExperimentSpec, MixingKind};
use stradiff::gp::GpConfig;
use stradiff::model::{Model, ModelConfig};
use stradiff::optim::AdamConfig;
use stradiff::trainer::{fit, TrainConfig};

fn main() -> stradiff::Result<()> {
    let spec = ExperimentSpec {
        t_len: 128,
        n: 3,
        m: 3,
        mixing_kind: MixingKind::Linear,
        noise_std: 0.0,
        seed: 0,
    };
    let (sources, mixture, _) = generate(&spec)?;

    let model_cfg = ModelConfig {
        t_len: spec.t_len,
        n: spec.n,
        m: spec.m,
        mixing_kind: MixingKind::Linear,
        hidden: 64,
        l: 10,
        beta_min: 0.01,
        beta_max: 0.2,
        gp: GpConfig { sigma_f2: 1.0, xi: 0.01 },
    };
    let train_cfg = TrainConfig {
        lambda_prior: 0.1,
        lambda_diff: 1.0,
        lambda_kl: 0.01,
        nu_y: 1.0,
        epochs: 3000,
        adam: AdamConfig { lr: 0.006, beta2: 0.99, ..AdamConfig::default() },
        seed: 0,
        snapshot_epochs: vec![],
        ..TrainConfig::default()
    };

    let mut model = Model::init(model_cfg, train_cfg.seed)?;
    let report = fit(&mut model, &mixture, Some(&sources), &train_cfg)?;

    println!("epoch     rec        prior      diff       kl        corr");
    for row in report.rows.iter().step_by(300).chain(report.rows.last()) {
        let corr: Vec<String> = row.corr.iter().map(|c| format!("{c:.3}")).collect();
        println!(
            "{:5}  {:9.3e}  {:9.3e}  {:9.3e}  {:9.3e}  [{}]",
            row.losses.epoch,
            row.losses.rec,
            row.losses.prior,
            row.losses.diff,
            row.losses.kl,
            corr.join(" ")
        );
    }
    let last = report.rows.last().unwrap();
    println!(
        "final length-scales: {:?}",
        last.ell.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>()
    );
    Ok(())
}
