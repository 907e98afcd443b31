//! Synthetic experiment data: three heterogeneous ground-truth sources and
//! linear or post-nonlinear mixtures with optional observation noise.

use crate::error::{Result, StradiffError};
use crate::gp::time_grid;
use crate::linalg;
use crate::rng::{rng_for, standard_normal_vec, STREAM_DATAGEN};
use crate::tensor::{Shape, Tensor};
use rand_chacha::ChaCha20Rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MixingKind {
    Linear,
    Nonlinear,
}

impl MixingKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(MixingKind::Linear),
            "nonlinear" => Ok(MixingKind::Nonlinear),
            other => Err(StradiffError::Config(format!("unknown mixing kind '{other}' (linear|nonlinear)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MixingKind::Linear => "linear",
            MixingKind::Nonlinear => "nonlinear",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub t_len: usize,
    pub n: usize,
    pub m: usize,
    pub mixing_kind: MixingKind,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec { t_len: 1000, n: 3, m: 3, mixing_kind: MixingKind::Linear, noise_std: 0.0, seed: 0 }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_len < 2 {
            return Err(StradiffError::Config("series length must be at least 2".into()));
        }
        if self.n == 0 || self.n > N_ARCHETYPES {
            return Err(StradiffError::Config(format!(
                "source count must be between 1 and {N_ARCHETYPES} (three archetype waveforms are built in)"
            )));
        }
        if self.m < self.n {
            return Err(StradiffError::Config("need at least as many channels as sources".into()));
        }
        if self.noise_std < 0.0 {
            return Err(StradiffError::Config("noise standard deviation must be nonnegative".into()));
        }
        Ok(())
    }
}

pub const N_ARCHETYPES: usize = 3;

/// The k-th archetype waveform at normalized time t, before standardization:
/// a slow sinusoid, a faster amplitude-modulated oscillation, and a smoothed
/// square wave, picked for visibly different temporal scales.
pub(crate) fn raw_waveform(k: usize, t: f64) -> f64 {
    use std::f64::consts::TAU;
    match k {
        0 => (TAU * 3.0 * t).sin(),
        1 => (TAU * 11.0 * t).sin() * (1.0 + 0.5 * (TAU * 1.5 * t).sin()),
        2 => (5.0 * (TAU * 5.0 * t).sin()).tanh(),
        _ => panic!("no archetype {k}"),
    }
}

/// Ground-truth sources S* (T×n), each column standardized to zero mean and
/// unit population standard deviation on the grid t_i = i/(T−1).
pub fn make_sources(spec: &ExperimentSpec) -> Result<Tensor> {
    spec.validate()?;
    let t = time_grid(spec.t_len);
    let mut s = Tensor::zeros(Shape::Matrix(spec.t_len, spec.n));
    for k in 0..spec.n {
        let mut col: Vec<f64> = t.iter().map(|&ti| raw_waveform(k, ti)).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        for v in col.iter_mut() {
            *v -= mean;
        }
        let var = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
        let std = var.sqrt();
        for (i, v) in col.iter().enumerate() {
            s.data[i * spec.n + k] = v / std;
        }
    }
    Ok(s)
}

/// Ground truth of a generated mixture: the linear map A* and, for the
/// post-nonlinear family, the outer map B*.
#[derive(Clone, Debug)]
pub struct MixtureTruth {
    pub a: Tensor,
    pub b: Option<Tensor>,
}

/// Y = S*·A*ᵀ.
pub fn mix_linear_truth(s: &Tensor, a: &Tensor) -> Tensor {
    let at = a.transposed();
    linalg::matmul(s, &at)
}

/// Y = tanh(S*·A*ᵀ)·B*ᵀ.
pub fn mix_nonlinear_truth(s: &Tensor, a: &Tensor, b: &Tensor) -> Tensor {
    let mut h = mix_linear_truth(s, a);
    for v in h.data.iter_mut() {
        *v = v.tanh();
    }
    let bt = b.transposed();
    linalg::matmul(&h, &bt)
}

/// N(0,1) matrix redrawn until its condition number is below `limit`.
fn well_conditioned(rng: &mut ChaCha20Rng, rows: usize, cols: usize, limit: f64) -> Result<Tensor> {
    for _ in 0..100 {
        let cand = Tensor::matrix(rows, cols, standard_normal_vec(rng, rows * cols));
        if linalg::condition_number(&cand) < limit {
            return Ok(cand);
        }
    }
    Err(StradiffError::Data(format!(
        "failed to draw a {rows}x{cols} mixing matrix with condition number below {limit} in 100 attempts"
    )))
}

/// Mixture from ground-truth sources. Draw order on the generation stream:
/// A* (with redraws), then B* for the nonlinear family, then the noise field.
pub fn make_mixture(s: &Tensor, spec: &ExperimentSpec, rng: &mut ChaCha20Rng) -> Result<(Tensor, MixtureTruth)> {
    spec.validate()?;
    assert_eq!(s.shape, Shape::Matrix(spec.t_len, spec.n));
    let a = well_conditioned(rng, spec.m, spec.n, 20.0)?;
    let (mut y, truth) = match spec.mixing_kind {
        MixingKind::Linear => (mix_linear_truth(s, &a), MixtureTruth { a, b: None }),
        MixingKind::Nonlinear => {
            let b = well_conditioned(rng, spec.m, spec.m, 20.0)?;
            (mix_nonlinear_truth(s, &a, &b), MixtureTruth { a, b: Some(b) })
        }
    };
    if spec.noise_std > 0.0 {
        let noise = standard_normal_vec(rng, y.len());
        for (v, e) in y.data.iter_mut().zip(noise.iter()) {
            *v += spec.noise_std * e;
        }
    }
    Ok((y, truth))
}

/// Full dataset for a spec: sources, mixture, and the mixing ground truth,
/// using the dedicated generation RNG stream of the seed.
pub fn generate(spec: &ExperimentSpec) -> Result<(Tensor, Tensor, MixtureTruth)> {
    let s = make_sources(spec)?;
    let mut rng = rng_for(spec.seed, STREAM_DATAGEN);
    let (y, truth) = make_mixture(&s, spec, &mut rng)?;
    Ok((s, y, truth))
}
