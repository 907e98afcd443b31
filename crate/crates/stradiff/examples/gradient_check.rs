//! Cross-check the smoothness penalty gradients along three independent
//! routes: hand-derived closed form, the reverse-mode tape, and central
//! finite differences.
//!
//! Run with: cargo run --example gradient_check

use rand::Rng;
use stradiff::gp::{gp_penalty_closed_form, gp_penalty_tape, kernel_spec, GpConfig};
use stradiff::rng::{rng_for, standard_normal_vec};
use stradiff::tape::{ParamStore, Tape};
use stradiff::tensor::Tensor;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn main() -> stradiff::Result<()> {
    let t_len = 24;
    let n = 3;
    let mut rng = rng_for(5, 90);
    let spec = kernel_spec(t_len, &GpConfig::default());
    let gammas: Vec<f64> =
        (0..n).map(|_| -4.0 + 3.0 * (rng.next_u64() as f64 / u64::MAX as f64)).collect();
    let sources: Vec<Tensor> =
        (0..n).map(|_| Tensor::vector(standard_normal_vec(&mut rng, t_len))).collect();

    // Route 1: closed form.
    let closed = gp_penalty_closed_form(&gammas, &sources, &spec)?;

    // Route 2: reverse-mode tape.
    let mut store = ParamStore::new();
    let gamma_ids: Vec<usize> =
        (0..n).map(|k| store.add(format!("g{k}"), Tensor::scalar(gammas[k]))).collect();
    let source_ids: Vec<usize> =
        (0..n).map(|k| store.add(format!("s{k}"), sources[k].clone())).collect();
    let mut tape = Tape::new();
    let gamma_nodes: Vec<_> = gamma_ids.iter().map(|&id| tape.param(&store, id)).collect();
    let source_nodes: Vec<_> = source_ids.iter().map(|&id| tape.param(&store, id)).collect();
    let root = gp_penalty_tape(&mut tape, &gamma_nodes, &source_nodes, &spec)?;
    let tape_value = tape.value(root).as_scalar();
    let grads = tape.backward(root, &store);

    println!("penalty value  closed {:+.12e}  tape {:+.12e}", closed.value, tape_value);

    // Route 3: central finite differences on the closed form.
    let h = 1e-5;
    let mut worst_tape = rel_err(tape_value, closed.value);
    let mut worst_fd = 0.0f64;
    for k in 0..n {
        let tape_g = grads.per_param[gamma_ids[k]].as_scalar();
        worst_tape = worst_tape.max(rel_err(tape_g, closed.grad_gamma[k]));

        let mut up = gammas.clone();
        up[k] += h;
        let mut dn = gammas.clone();
        dn[k] -= h;
        let fd = (gp_penalty_closed_form(&up, &sources, &spec)?.value
            - gp_penalty_closed_form(&dn, &sources, &spec)?.value)
            / (2.0 * h);
        worst_fd = worst_fd.max(rel_err(fd, closed.grad_gamma[k]));
        println!(
            "d/dgamma[{k}]   closed {:+.9e}  tape {:+.9e}  fd {:+.9e}",
            closed.grad_gamma[k], tape_g, fd
        );

        for i in 0..t_len {
            let tape_g = grads.per_param[source_ids[k]].data[i];
            worst_tape = worst_tape.max(rel_err(tape_g, closed.grad_s[k].data[i]));
            let mut up = sources.clone();
            up[k].data[i] += h;
            let mut dn = sources.clone();
            dn[k].data[i] -= h;
            let fd = (gp_penalty_closed_form(&gammas, &up, &spec)?.value
                - gp_penalty_closed_form(&gammas, &dn, &spec)?.value)
                / (2.0 * h);
            worst_fd = worst_fd.max(rel_err(fd, closed.grad_s[k].data[i]));
        }
    }

    println!("worst rel err  closed vs tape {worst_tape:.3e}  vs finite differences {worst_fd:.3e}");
    Ok(())
}
