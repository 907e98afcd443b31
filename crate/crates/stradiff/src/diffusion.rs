//! Per-branch reverse-diffusion generators.
//!
//! A variance-preserving forward process with L steps defines
//! ᾱ_τ = Π_{u≤τ} (1 − β_u); the generator runs the deterministic reverse
//! update from a start z:
//!
//!   x̂₀ = (x_τ − √(1−ᾱ_τ)·ε_θ(x_τ, τ/L)) / (√ᾱ_τ + ε_num)
//!   x_{τ−1} = √ᾱ_{τ−1}·x̂₀ + √(1−ᾱ_{τ−1})·ε_θ(x_τ, τ/L)
//!
//! reusing the same network evaluation in both lines. With an identically
//! zero network and ε_num = 0 the chain telescopes to x₀ = z/√ᾱ_L.
//!
//! Every routine exists twice: a tape version used in training and a raw
//! version used for sampling; they perform the same arithmetic in the same
//! order and produce bit-identical values.

use crate::error::{Result, StradiffError};
use crate::linalg;
use crate::rng::standard_normal_vec;
use crate::tape::{NodeId, ParamStore, Tape};
use crate::tensor::{Shape, Tensor};
use rand_chacha::ChaCha20Rng;

/// Numerical guard added to √ᾱ_τ in the reverse update during training.
pub const EPS_NUM: f64 = 1e-8;

/// Default β range for an L-step schedule, scaled so that total noise
/// injected is comparable to a 1000-step reference schedule.
pub fn default_beta_range(l: usize) -> (f64, f64) {
    let s = 1000.0 / l as f64;
    (1e-4 * s, (0.02 * s).min(0.2))
}

#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    pub l: usize,
    /// β_1..β_L (index 0 is β_1).
    pub beta: Vec<f64>,
    /// ᾱ_0..ᾱ_L with ᾱ_0 = 1, indexed directly by τ.
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn sqrt_alpha_bar(&self, tau: usize) -> f64 {
        self.alpha_bar[tau].sqrt()
    }

    pub fn sqrt_one_minus_alpha_bar(&self, tau: usize) -> f64 {
        (1.0 - self.alpha_bar[tau]).sqrt()
    }
}

/// β_τ linear from `beta_min` to `beta_max` over τ = 1..L.
pub fn make_schedule(l: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if l == 0 {
        return Err(StradiffError::Config("diffusion steps must be at least 1".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(StradiffError::Config(format!(
            "beta range must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let beta: Vec<f64> = if l == 1 {
        vec![beta_min]
    } else {
        (0..l).map(|i| beta_min + (beta_max - beta_min) * i as f64 / (l - 1) as f64).collect()
    };
    let mut alpha_bar = Vec::with_capacity(l + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    for w in alpha_bar.windows(2) {
        if !(w[1] < w[0] && w[1] > 0.0) {
            return Err(StradiffError::numerical("cumulative signal level is not strictly decreasing"));
        }
    }
    Ok(NoiseSchedule { l, beta, alpha_bar })
}

/// Parameter handles for one branch's noise-prediction MLP:
/// (T+1) → hidden → hidden → T with tanh activations, zero-initialized
/// output layer, and the step fraction appended to the input.
#[derive(Clone, Debug)]
pub struct EpsilonNet {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
}

pub const DEFAULT_HIDDEN: usize = 128;

impl EpsilonNet {
    /// Registers parameters under `{prefix}.w1` … `{prefix}.b3`. Hidden
    /// weights draw N(0,1)·√(1/fan_in) in row-major order (w1 then w2);
    /// biases and the whole output layer start at zero, so a fresh network
    /// is the zero function.
    pub fn init(store: &mut ParamStore, prefix: &str, t_len: usize, hidden: usize, rng: &mut ChaCha20Rng) -> Self {
        let fan1 = (1.0 / (t_len + 1) as f64).sqrt();
        let mut w1 = standard_normal_vec(rng, hidden * (t_len + 1));
        for v in w1.iter_mut() {
            *v *= fan1;
        }
        let fan2 = (1.0 / hidden as f64).sqrt();
        let mut w2 = standard_normal_vec(rng, hidden * hidden);
        for v in w2.iter_mut() {
            *v *= fan2;
        }
        EpsilonNet {
            w1: store.add(format!("{prefix}.w1"), Tensor::matrix(hidden, t_len + 1, w1)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(Shape::Vector(hidden))),
            w2: store.add(format!("{prefix}.w2"), Tensor::matrix(hidden, hidden, w2)),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(Shape::Vector(hidden))),
            w3: store.add(format!("{prefix}.w3"), Tensor::zeros(Shape::Matrix(t_len, hidden))),
            b3: store.add(format!("{prefix}.b3"), Tensor::zeros(Shape::Vector(t_len))),
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, x: NodeId, frac: f64) -> NodeId {
        let h = tape.append_const(x, frac);
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let a1 = tape.matvec(w1, h);
        let a1b = tape.add(a1, b1);
        let t1 = tape.tanh(a1b);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let a2 = tape.matvec(w2, t1);
        let a2b = tape.add(a2, b2);
        let t2 = tape.tanh(a2b);
        let w3 = tape.param(store, self.w3);
        let b3 = tape.param(store, self.b3);
        let a3 = tape.matvec(w3, t2);
        tape.add(a3, b3)
    }

    pub fn forward_raw(&self, store: &ParamStore, x: &Tensor, frac: f64) -> Tensor {
        let mut h = x.data.clone();
        h.push(frac);
        let h = Tensor::vector(h);
        let mut a1 = linalg::matvec(store.get(self.w1), &h, false);
        for (v, b) in a1.data.iter_mut().zip(store.get(self.b1).data.iter()) {
            *v += b;
        }
        for v in a1.data.iter_mut() {
            *v = v.tanh();
        }
        let mut a2 = linalg::matvec(store.get(self.w2), &a1, false);
        for (v, b) in a2.data.iter_mut().zip(store.get(self.b2).data.iter()) {
            *v += b;
        }
        for v in a2.data.iter_mut() {
            *v = v.tanh();
        }
        let mut a3 = linalg::matvec(store.get(self.w3), &a2, false);
        for (v, b) in a3.data.iter_mut().zip(store.get(self.b3).data.iter()) {
            *v += b;
        }
        a3
    }
}

/// Full reverse chain on the tape, returning x₀.
pub fn reverse_sample_tape(
    tape: &mut Tape,
    store: &ParamStore,
    net: &EpsilonNet,
    schedule: &NoiseSchedule,
    z: NodeId,
    eps_num: f64,
) -> NodeId {
    let mut x = z;
    for tau in (1..=schedule.l).rev() {
        let frac = tau as f64 / schedule.l as f64;
        let e = net.forward_tape(tape, store, x, frac);
        let se = tape.scale(e, schedule.sqrt_one_minus_alpha_bar(tau));
        let num = tape.sub(x, se);
        let x0 = tape.scale(num, 1.0 / (schedule.sqrt_alpha_bar(tau) + eps_num));
        let a = tape.scale(x0, schedule.sqrt_alpha_bar(tau - 1));
        let b = tape.scale(e, schedule.sqrt_one_minus_alpha_bar(tau - 1));
        x = tape.add(a, b);
    }
    x
}

/// Raw twin of [`reverse_sample_tape`].
pub fn reverse_sample_raw(
    store: &ParamStore,
    net: &EpsilonNet,
    schedule: &NoiseSchedule,
    z: &Tensor,
    eps_num: f64,
) -> Tensor {
    let mut x = z.clone();
    for tau in (1..=schedule.l).rev() {
        x = reverse_step_raw(store, net, schedule, &x, tau, eps_num);
    }
    x
}

fn reverse_step_raw(
    store: &ParamStore,
    net: &EpsilonNet,
    schedule: &NoiseSchedule,
    x: &Tensor,
    tau: usize,
    eps_num: f64,
) -> Tensor {
    let frac = tau as f64 / schedule.l as f64;
    let e = net.forward_raw(store, x, frac);
    let c_noise = schedule.sqrt_one_minus_alpha_bar(tau);
    let c_sig = 1.0 / (schedule.sqrt_alpha_bar(tau) + eps_num);
    let a = schedule.sqrt_alpha_bar(tau - 1);
    let b = schedule.sqrt_one_minus_alpha_bar(tau - 1);
    let data = x
        .data
        .iter()
        .zip(e.data.iter())
        .map(|(xi, ei)| {
            let x0 = c_sig * (xi - c_noise * ei);
            a * x0 + b * ei
        })
        .collect();
    Tensor::new(x.shape, data)
}

/// Reverse chain recording every intermediate state: (τ, x_τ) for
/// τ = L, L−1, …, 0, i.e. L+1 rows starting at the draw z.
pub fn reverse_sample_path_raw(
    store: &ParamStore,
    net: &EpsilonNet,
    schedule: &NoiseSchedule,
    z: &Tensor,
    eps_num: f64,
) -> Vec<(usize, Tensor)> {
    let mut path = Vec::with_capacity(schedule.l + 1);
    let mut x = z.clone();
    path.push((schedule.l, x.clone()));
    for tau in (1..=schedule.l).rev() {
        x = reverse_step_raw(store, net, schedule, &x, tau, eps_num);
        path.push((tau - 1, x.clone()));
    }
    path
}

/// Forward noising x_τ = √ᾱ_τ·s + √(1−ᾱ_τ)·η on the tape; the noise enters
/// as a constant so gradients reach s only.
pub fn forward_noise_tape(tape: &mut Tape, s: NodeId, eta: &Tensor, schedule: &NoiseSchedule, tau: usize) -> NodeId {
    let sa = schedule.sqrt_alpha_bar(tau);
    let sn = schedule.sqrt_one_minus_alpha_bar(tau);
    let xs = tape.scale(s, sa);
    let scaled_eta = Tensor::new(eta.shape, eta.data.iter().map(|v| sn * v).collect());
    let c = tape.constant(scaled_eta);
    tape.add(xs, c)
}

/// Raw twin of [`forward_noise_tape`].
pub fn forward_noise_raw(s: &Tensor, eta: &Tensor, schedule: &NoiseSchedule, tau: usize) -> Tensor {
    let sa = schedule.sqrt_alpha_bar(tau);
    let sn = schedule.sqrt_one_minus_alpha_bar(tau);
    let data = s.data.iter().zip(eta.data.iter()).map(|(si, ei)| sa * si + sn * ei).collect();
    Tensor::new(s.shape, data)
}
