//! Gaussian-process smoothness penalty with per-branch adaptive length-scales.
//!
//! Each latent source s⁽ᵏ⁾ ∈ ℝᵀ on the normalized time grid t_i = i/(T−1)
//! pays a negative log-density under a zero-mean GP with squared-exponential
//! kernel K⁽ᵏ⁾ whose length-scale ℓ_k = exp(γ_k) + 1e−6 is itself trained.
//! The penalty over n branches is
//!
//!   (1/(2·T·n)) Σ_k [ T·log 2π + log|K⁽ᵏ⁾| + s⁽ᵏ⁾ᵀ (K⁽ᵏ⁾)⁻¹ s⁽ᵏ⁾ ].
//!
//! Two independent gradient routes exist on purpose: the tape route built
//! from Cholesky/solve/log-det nodes (used in training), and a closed-form
//! route using the explicit inverse (used to cross-check the engine).

use crate::error::Result;
use crate::linalg;
use crate::tape::{se_kernel_forward, NodeId, SeKernelSpec, Tape};
use crate::tensor::Tensor;
use std::sync::Arc;

pub const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Copy, Debug)]
pub struct GpConfig {
    /// Kernel signal variance σ_f².
    pub sigma_f2: f64,
    /// Diagonal jitter ξ keeping K positive definite.
    pub xi: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { sigma_f2: 1.0, xi: 1e-4 }
    }
}

/// Normalized time grid 0, 1/(T−1), …, 1 (a single 0 when T = 1).
pub fn time_grid(t_len: usize) -> Vec<f64> {
    assert!(t_len > 0);
    if t_len == 1 {
        return vec![0.0];
    }
    (0..t_len).map(|i| i as f64 / (t_len - 1) as f64).collect()
}

pub fn kernel_spec(t_len: usize, cfg: &GpConfig) -> Arc<SeKernelSpec> {
    SeKernelSpec::new(time_grid(t_len), cfg.sigma_f2, cfg.xi)
}

/// Initial unconstrained length-scale for branch k; slight stagger breaks
/// the symmetry between otherwise identical branches.
pub fn gamma_init(k: usize) -> f64 {
    (0.1f64).ln() + 0.01 * k as f64
}

/// Length-scale expressed in time-step units instead of normalized time.
pub fn rescale_ell(ell: f64, t_len: usize) -> f64 {
    ell * (t_len.saturating_sub(1)) as f64
}

/// Tape-route penalty over all branches; gradients flow to both the sources
/// and the γ parameters through the kernel factorization nodes.
pub fn gp_penalty_tape(
    tape: &mut Tape,
    gammas: &[NodeId],
    sources: &[NodeId],
    spec: &Arc<SeKernelSpec>,
) -> Result<NodeId> {
    assert_eq!(gammas.len(), sources.len());
    let n = gammas.len();
    let t_len = spec.t.len();
    let mut total: Option<NodeId> = None;
    for k in 0..n {
        let kmat = tape.se_kernel(gammas[k], spec);
        let l = tape.cholesky(kmat)?;
        let ld = tape.logdet_from_chol(l);
        let w = tape.tri_solve_lower(l, sources[k]);
        let quad = tape.sum_sq(w);
        let lq = tape.add(ld, quad);
        let term = tape.offset(lq, t_len as f64 * LN_2PI);
        total = Some(match total {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    let sum = total.expect("at least one branch");
    Ok(tape.scale(sum, 1.0 / (2.0 * t_len as f64 * n as f64)))
}

/// Closed-form value and gradients for one branch, before the 1/(T·n)
/// normalization that the caller applies.
pub struct GpClosedForm {
    /// E = ½ (T log 2π + log|K| + sᵀK⁻¹s).
    pub value: f64,
    /// ∂E/∂s = K⁻¹ s.
    pub grad_s: Tensor,
    /// ∂E/∂γ via ∂E/∂ℓ = ½ tr(K⁻¹ K̇) − ½ sᵀK⁻¹ K̇ K⁻¹ s and dℓ/dγ = exp(γ),
    /// where K̇_ij = (K_ij − ξδ_ij)·Δt²_ij/ℓ³.
    pub grad_gamma: f64,
}

pub fn gp_branch_closed_form(gamma: f64, s: &Tensor, spec: &SeKernelSpec) -> Result<GpClosedForm> {
    let t_len = spec.t.len();
    assert_eq!(s.len(), t_len);
    let ell = SeKernelSpec::ell(gamma);
    let k = se_kernel_forward(gamma, spec);
    let l = linalg::cholesky_lower(&k)?;
    let kinv = linalg::spd_inverse_from_chol(&l);
    let logdet = (0..t_len).map(|i| 2.0 * l.at(i, i).ln()).sum::<f64>();
    let alpha = linalg::matvec(&kinv, s, false);
    let quad: f64 = s.data.iter().zip(alpha.data.iter()).map(|(a, b)| a * b).sum();

    let mut trace = 0.0;
    let mut quad_dot = 0.0;
    let ell3 = ell * ell * ell;
    for i in 0..t_len {
        for j in 0..t_len {
            let dt = spec.t[i] - spec.t[j];
            let base = if i == j { k.at(i, j) - spec.xi } else { k.at(i, j) };
            let kdot = base * dt * dt / ell3;
            trace += kinv.at(i, j) * kdot;
            quad_dot += alpha.data[i] * kdot * alpha.data[j];
        }
    }
    let grad_ell = 0.5 * trace - 0.5 * quad_dot;

    Ok(GpClosedForm {
        value: 0.5 * (t_len as f64 * LN_2PI + logdet + quad),
        grad_s: alpha,
        grad_gamma: grad_ell * gamma.exp(),
    })
}

/// Closed-form penalty over all branches with fully normalized gradients;
/// this is the independent route the engine is validated against.
pub struct GpClosedPenalty {
    pub value: f64,
    pub grad_s: Vec<Tensor>,
    pub grad_gamma: Vec<f64>,
}

pub fn gp_penalty_closed_form(gammas: &[f64], sources: &[Tensor], spec: &SeKernelSpec) -> Result<GpClosedPenalty> {
    assert_eq!(gammas.len(), sources.len());
    let n = gammas.len();
    let t_len = spec.t.len();
    let norm = 1.0 / (t_len as f64 * n as f64);
    let mut value = 0.0;
    let mut grad_s = Vec::with_capacity(n);
    let mut grad_gamma = Vec::with_capacity(n);
    for k in 0..n {
        let branch = gp_branch_closed_form(gammas[k], &sources[k], spec)?;
        value += norm * branch.value;
        let mut gs = branch.grad_s;
        for v in gs.data.iter_mut() {
            *v *= norm;
        }
        grad_s.push(gs);
        grad_gamma.push(norm * branch.grad_gamma);
    }
    Ok(GpClosedPenalty { value, grad_s, grad_gamma })
}
