//! Learnable Gaussian start distributions for the reverse chains.
//!
//! Each branch k owns μ⁽ᵏ⁾, log σ⁽ᵏ⁾ ∈ ℝᵀ and draws its chain start as
//! z = μ + σ ⊙ ε with ε ~ N(0, I). A KL penalty toward N(0, I),
//!
//!   (1/(2·T·n)) Σ_k Σ_i [ μ_i² + σ_i² − 1 − log σ_i² ],
//!
//! keeps the starts anchored. log σ is clamped to a safe range in the
//! forward pass; gradients vanish at the clamp boundary.

use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const LOG_SIGMA_MIN: f64 = -10.0;
pub const LOG_SIGMA_MAX: f64 = 5.0;

fn clamped(ls: f64) -> f64 {
    ls.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)
}

/// Reparameterized start draw on the tape: z = μ + exp(clamp(log σ)) ⊙ ε.
/// The noise ε enters as a constant, so gradients flow to μ and log σ only.
pub fn sample_start_tape(tape: &mut Tape, mu: NodeId, log_sigma: NodeId, eps: &Tensor) -> NodeId {
    let c = tape.clamp(log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
    let sigma = tape.exp(c);
    let e = tape.constant(eps.clone());
    let scaled = tape.mul(sigma, e);
    tape.add(mu, scaled)
}

/// Non-tape twin of [`sample_start_tape`]; bit-identical values.
pub fn sample_start_raw(mu: &Tensor, log_sigma: &Tensor, eps: &Tensor) -> Tensor {
    assert_eq!(mu.shape, log_sigma.shape);
    assert_eq!(mu.shape, eps.shape);
    let data = mu
        .data
        .iter()
        .zip(log_sigma.data.iter())
        .zip(eps.data.iter())
        .map(|((m, ls), e)| m + clamped(*ls).exp() * e)
        .collect();
    Tensor::new(mu.shape, data)
}

/// KL penalty over all branches on the tape. log σ² is formed as 2·clamp(log σ),
/// which keeps the term exactly linear in the parameter inside the clamp range.
pub fn kl_penalty_tape(tape: &mut Tape, mus: &[NodeId], log_sigmas: &[NodeId], t_len: usize) -> NodeId {
    assert_eq!(mus.len(), log_sigmas.len());
    let n = mus.len();
    let mut total: Option<NodeId> = None;
    for k in 0..n {
        let c = tape.clamp(log_sigmas[k], LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        let mu2 = tape.square(mus[k]);
        let two_c = tape.scale(c, 2.0);
        let sigma2 = tape.exp(two_c);
        let a = tape.add(mu2, sigma2);
        let b = tape.offset(a, -1.0);
        let term = tape.sub(b, two_c);
        let s = tape.sum(term);
        total = Some(match total {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    let sum = total.expect("at least one branch");
    tape.scale(sum, 1.0 / (2.0 * t_len as f64 * n as f64))
}

/// Non-tape twin of [`kl_penalty_tape`].
pub fn kl_penalty_raw(branches: &[(&Tensor, &Tensor)], t_len: usize) -> f64 {
    let n = branches.len();
    let mut sum = 0.0;
    for (mu, log_sigma) in branches {
        assert_eq!(mu.len(), t_len);
        for (m, ls) in mu.data.iter().zip(log_sigma.data.iter()) {
            let c = clamped(*ls);
            sum += m * m + (2.0 * c).exp() - 1.0 - 2.0 * c;
        }
    }
    sum / (2.0 * t_len as f64 * n as f64)
}
