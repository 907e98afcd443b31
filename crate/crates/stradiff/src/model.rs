//! The full trainable state: n generator branches (start distribution,
//! noise network, length-scale), the mixing map, the shared noise schedule,
//! and the data normalization statistics.

use crate::datagen::MixingKind;
use crate::diffusion::{make_schedule, reverse_sample_raw, EpsilonNet, NoiseSchedule, EPS_NUM};
use crate::error::Result;
use crate::gp::{gamma_init, kernel_spec, GpConfig};
use crate::latent::sample_start_raw;
use crate::mixing::{LinearMixing, MixingMap, NonlinearMixing, MIXING_HIDDEN};
use crate::rng::{rng_for, standard_normal_vec, STREAM_INIT};
use crate::tape::{ParamStore, SeKernelSpec};
use crate::tensor::{Shape, Tensor};
use rand_chacha::ChaCha20Rng;
use std::sync::Arc;

/// Structural hyperparameters; everything needed to rebuild the parameter
/// layout exactly.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub t_len: usize,
    pub n: usize,
    pub m: usize,
    pub mixing_kind: MixingKind,
    pub hidden: usize,
    pub l: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub gp: GpConfig,
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub mu: usize,
    pub log_sigma: usize,
    pub gamma: usize,
    pub net: EpsilonNet,
}

/// Per-channel standardization statistics of the training mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Per-channel mean and standard deviation with a 1e−8 floor on the
    /// scale so constant channels stay finite.
    pub fn fit(y: &Tensor) -> NormStats {
        let (t_len, m) = match y.shape {
            Shape::Matrix(t, m) => (t, m),
            _ => panic!("normalization expects a T×m matrix"),
        };
        let mut mean = vec![0.0; m];
        let mut std = vec![0.0; m];
        for j in 0..m {
            let mu = (0..t_len).map(|i| y.data[i * m + j]).sum::<f64>() / t_len as f64;
            let var = (0..t_len).map(|i| (y.data[i * m + j] - mu).powi(2)).sum::<f64>() / t_len as f64;
            mean[j] = mu;
            std[j] = var.sqrt().max(1e-8);
        }
        NormStats { mean, std }
    }

    pub fn apply(&self, y: &Tensor) -> Tensor {
        let (t_len, m) = match y.shape {
            Shape::Matrix(t, m) => (t, m),
            _ => panic!(),
        };
        assert_eq!(m, self.mean.len());
        let mut out = y.clone();
        for i in 0..t_len {
            for j in 0..m {
                out.data[i * m + j] = (out.data[i * m + j] - self.mean[j]) / self.std[j];
            }
        }
        out
    }

    pub fn invert(&self, y_norm: &Tensor) -> Tensor {
        let (t_len, m) = match y_norm.shape {
            Shape::Matrix(t, m) => (t, m),
            _ => panic!(),
        };
        assert_eq!(m, self.mean.len());
        let mut out = y_norm.clone();
        for i in 0..t_len {
            for j in 0..m {
                out.data[i * m + j] = out.data[i * m + j] * self.std[j] + self.mean[j];
            }
        }
        out
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub branches: Vec<Branch>,
    pub mixing: MixingMap,
    pub schedule: NoiseSchedule,
    pub kernel: Arc<SeKernelSpec>,
    pub norm: Option<NormStats>,
}

impl Model {
    /// Builds all parameters on the initialization RNG stream of `seed`.
    ///
    /// Registration (and RNG draw) order per branch k: μ⁽ᵏ⁾ = 0,
    /// log σ⁽ᵏ⁾ = 0, γ_k = log(0.1) + 0.01·k, then the noise network; the
    /// mixing map comes after all branches. Only the networks and the mixing
    /// map consume random draws.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Model> {
        let mut rng = rng_for(seed, STREAM_INIT);
        let mut store = ParamStore::new();
        let mut branches = Vec::with_capacity(cfg.n);
        for k in 0..cfg.n {
            let mu = store.add(format!("branch{k}.mu"), Tensor::zeros(Shape::Vector(cfg.t_len)));
            let log_sigma = store.add(format!("branch{k}.log_sigma"), Tensor::zeros(Shape::Vector(cfg.t_len)));
            let gamma = store.add(format!("branch{k}.gamma"), Tensor::scalar(gamma_init(k)));
            let net = EpsilonNet::init(&mut store, &format!("branch{k}.eps"), cfg.t_len, cfg.hidden, &mut rng);
            branches.push(Branch { mu, log_sigma, gamma, net });
        }
        let mixing = match cfg.mixing_kind {
            MixingKind::Linear => MixingMap::Linear(LinearMixing::init(&mut store, cfg.m, cfg.n, &mut rng)?),
            MixingKind::Nonlinear => {
                MixingMap::Nonlinear(NonlinearMixing::init(&mut store, cfg.m, cfg.n, MIXING_HIDDEN, &mut rng))
            }
        };
        let schedule = make_schedule(cfg.l, cfg.beta_min, cfg.beta_max)?;
        let kernel = kernel_spec(cfg.t_len, &cfg.gp);
        Ok(Model { cfg, store, branches, mixing, schedule, kernel, norm: None })
    }

    /// One non-tape source draw: per branch, in branch order, draw ε ∈ ℝᵀ,
    /// form z = μ + σ⊙ε, run the reverse chain; stack results as columns.
    pub fn sample_sources_raw(&self, rng: &mut ChaCha20Rng) -> Tensor {
        let cols: Vec<Tensor> = self
            .branches
            .iter()
            .map(|br| {
                let eps = Tensor::vector(standard_normal_vec(rng, self.cfg.t_len));
                let z = sample_start_raw(self.store.get(br.mu), self.store.get(br.log_sigma), &eps);
                reverse_sample_raw(&self.store, &br.net, &self.schedule, &z, EPS_NUM)
            })
            .collect();
        Tensor::from_cols(&cols)
    }

    /// Current length-scales ℓ_k = exp(γ_k) + 1e−6.
    pub fn length_scales(&self) -> Vec<f64> {
        self.branches.iter().map(|br| SeKernelSpec::ell(self.store.get(br.gamma).as_scalar())).collect()
    }
}
