//! The joint training objective and loop.
//!
//! Each epoch runs one full pass over the entire time grid:
//! draw start noise per branch, run every reverse chain on the tape, stack
//! the sources, mix, then assemble
//!
//!   total = rec + λ_prior·prior + λ_diff·diff + λ_KL·kl
//!
//! backpropagate, take one Adam step, and (for linear mixing) renormalize
//! the mixing columns outside the gradient path.

use crate::diffusion::{forward_noise_tape, reverse_sample_path_raw, reverse_sample_tape, EPS_NUM};
use crate::error::{Result, StradiffError};
use crate::estimate::match_sources;
use crate::gp::{gp_penalty_tape, rescale_ell};
use crate::latent::{kl_penalty_tape, sample_start_raw, sample_start_tape};
use crate::mixing::{normalize_columns, MixingMap};
use crate::model::{Model, NormStats};
use crate::optim::{adam_step, AdamConfig};
use crate::rng::{rng_for, snapshot_rng, standard_normal_vec, STREAM_TRAIN};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Shape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lambda_prior: f64,
    pub lambda_diff: f64,
    pub lambda_kl: f64,
    pub nu_y: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Epochs at which reverse-chain paths are captured; the post-training
    /// state is always captured as well.
    pub snapshot_epochs: Vec<usize>,
    /// Keeps the mixing map at its current value (no updates, no column
    /// renormalization). Used by reduction studies, not exposed on the CLI.
    pub freeze_mixing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_prior: 0.1,
            lambda_diff: 1.0,
            lambda_kl: 0.01,
            nu_y: 1.0,
            epochs: 10_000,
            adam: AdamConfig::default(),
            seed: 0,
            snapshot_epochs: vec![0, 3000],
            freeze_mixing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_prior < 0.0 || self.lambda_diff < 0.0 || self.lambda_kl < 0.0 {
            return Err(StradiffError::Config("loss weights must be nonnegative".into()));
        }
        if !(self.nu_y > 0.0) {
            return Err(StradiffError::Config("reconstruction weight nu_y must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(StradiffError::Config("epoch count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub rec: f64,
    pub prior: f64,
    pub diff: f64,
    pub kl: f64,
    pub total: f64,
}

/// (1/(2·ν_y·T·m))·‖Ỹ − Ŷ‖_F².
pub fn reconstruction_loss(tape: &mut Tape, y_norm: NodeId, yhat: NodeId, nu_y: f64) -> NodeId {
    let (t_len, m) = match tape.value(y_norm).shape {
        Shape::Matrix(t, m) => (t, m),
        _ => panic!("reconstruction expects matrices"),
    };
    assert_eq!(tape.value(yhat).shape, Shape::Matrix(t_len, m));
    let d = tape.sub(y_norm, yhat);
    let ss = tape.sum_sq(d);
    tape.scale(ss, 1.0 / (2.0 * nu_y * t_len as f64 * m as f64))
}

/// (1/T)·‖e − η‖² for one branch's network output e.
pub fn denoising_term(tape: &mut Tape, eps_out: NodeId, eta: &Tensor) -> NodeId {
    let t_len = eta.len();
    assert_eq!(tape.value(eps_out).shape, eta.shape);
    let etac = tape.constant(eta.clone());
    let d = tape.sub(eps_out, etac);
    let ss = tape.sum_sq(d);
    tape.scale(ss, 1.0 / t_len as f64)
}

/// Denoising loss over all branches at one shared step τ: noise each branch's
/// sampled source, predict the noise, and average the per-branch residuals.
/// Gradients flow through the sources into the generators (no stop-gradient).
///
/// Draw order: one shared τ uniform on {1..L}, then η⁽ᵏ⁾ per branch in
/// branch order.
pub fn denoising_loss(
    tape: &mut Tape,
    model: &Model,
    sources: &[NodeId],
    rng: &mut ChaCha20Rng,
) -> NodeId {
    let l = model.schedule.l;
    let t_len = model.cfg.t_len;
    let tau = 1 + (rng.next_u64() % l as u64) as usize;
    let mut total: Option<NodeId> = None;
    for (k, br) in model.branches.iter().enumerate() {
        let eta = Tensor::vector(standard_normal_vec(rng, t_len));
        let x_tau = forward_noise_tape(tape, sources[k], &eta, &model.schedule, tau);
        let e = br.net.forward_tape(tape, &model.store, x_tau, tau as f64 / l as f64);
        let term = denoising_term(tape, e, &eta);
        total = Some(match total {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    let sum = total.expect("at least one branch");
    tape.scale(sum, 1.0 / model.branches.len() as f64)
}

fn mixing_param_ids(mixing: &MixingMap) -> Vec<usize> {
    match mixing {
        MixingMap::Linear(l) => vec![l.a],
        MixingMap::Nonlinear(n) => vec![n.w1, n.b1, n.w2, n.b2, n.w3, n.b3],
    }
}

fn numerical_with_epoch(epoch: usize) -> impl Fn(StradiffError) -> StradiffError {
    move |e| StradiffError::NumericalFault { context: format!("training epoch {epoch}: {e}") }
}

/// One full optimization step. Returns the loss breakdown evaluated at the
/// pre-update state together with the sampled source matrix S (T×n) used in
/// this step (for diagnostics).
pub fn train_step(
    model: &mut Model,
    y_norm: &Tensor,
    cfg: &TrainConfig,
    rng: &mut ChaCha20Rng,
    epoch: usize,
) -> Result<(LossBreakdown, Tensor)> {
    let t_len = model.cfg.t_len;
    let mut tape = Tape::new();

    // Start noise per branch, in branch order.
    let eps_draws: Vec<Tensor> =
        (0..model.branches.len()).map(|_| Tensor::vector(standard_normal_vec(rng, t_len))).collect();

    let mut source_nodes = Vec::with_capacity(model.branches.len());
    let mut gamma_nodes = Vec::with_capacity(model.branches.len());
    let mut mu_nodes = Vec::with_capacity(model.branches.len());
    let mut ls_nodes = Vec::with_capacity(model.branches.len());
    for (k, br) in model.branches.iter().enumerate() {
        let mu = tape.param(&model.store, br.mu);
        let ls = tape.param(&model.store, br.log_sigma);
        let z = sample_start_tape(&mut tape, mu, ls, &eps_draws[k]);
        let x0 = reverse_sample_tape(&mut tape, &model.store, &br.net, &model.schedule, z, EPS_NUM);
        source_nodes.push(x0);
        gamma_nodes.push(tape.param(&model.store, br.gamma));
        mu_nodes.push(mu);
        ls_nodes.push(ls);
    }

    let s = tape.stack_cols(&source_nodes);
    let yhat = model.mixing.mix_tape(&mut tape, &model.store, s);
    let yn = tape.constant(y_norm.clone());
    let rec = reconstruction_loss(&mut tape, yn, yhat, cfg.nu_y);

    let prior = gp_penalty_tape(&mut tape, &gamma_nodes, &source_nodes, &model.kernel)
        .map_err(numerical_with_epoch(epoch))?;

    // τ and η are always drawn, even at λ_diff = 0, so the random stream
    // layout does not depend on the weights.
    let diff = denoising_loss(&mut tape, model, &source_nodes, rng);
    let kl = kl_penalty_tape(&mut tape, &mu_nodes, &ls_nodes, t_len);

    // Zero-weight terms stay out of the graph root: their values are still
    // reported, but they contribute neither to total nor to gradients.
    let mut total = rec;
    for (node, lambda) in [(prior, cfg.lambda_prior), (diff, cfg.lambda_diff), (kl, cfg.lambda_kl)] {
        if lambda != 0.0 {
            let w = tape.scale(node, lambda);
            total = tape.add(total, w);
        }
    }

    let breakdown = LossBreakdown {
        epoch,
        rec: tape.value(rec).as_scalar(),
        prior: tape.value(prior).as_scalar(),
        diff: tape.value(diff).as_scalar(),
        kl: tape.value(kl).as_scalar(),
        total: tape.value(total).as_scalar(),
    };
    if !breakdown.total.is_finite() {
        return Err(StradiffError::NumericalFault {
            context: format!("training epoch {epoch}: non-finite loss {breakdown:?}"),
        });
    }

    let mut grads = tape.backward(total, &model.store);
    if cfg.freeze_mixing {
        for pid in mixing_param_ids(&model.mixing) {
            grads.per_param[pid] = Tensor::zeros(model.store.get(pid).shape);
        }
    }
    adam_step(&mut model.store, &grads, &cfg.adam).map_err(numerical_with_epoch(epoch))?;

    if !cfg.freeze_mixing {
        if let MixingMap::Linear(lin) = &model.mixing {
            let lin = lin.clone();
            normalize_columns(&mut model.store, &lin).map_err(numerical_with_epoch(epoch))?;
        }
    }

    let s_value = tape.value(s).clone();
    Ok((breakdown, s_value))
}

/// One report row: losses at the pre-step state, matched correlations of the
/// step's source sample against the truth (NaN without truth), and the
/// length-scales at the same state.
#[derive(Clone, Debug)]
pub struct ReportRow {
    pub losses: LossBreakdown,
    pub corr: Vec<f64>,
    pub ell: Vec<f64>,
    pub ell_rescaled: Vec<f64>,
}

/// Reverse-chain states of every branch from a dedicated, history-free RNG
/// stream keyed by epoch.
#[derive(Clone, Debug)]
pub struct PathSnapshot {
    pub epoch: usize,
    pub branch: usize,
    /// (τ, x_τ) for τ = L..0.
    pub path: Vec<(usize, Tensor)>,
}

pub struct TrainReport {
    pub rows: Vec<ReportRow>,
    pub snapshots: Vec<PathSnapshot>,
}

/// Paths for all branches at the given epoch, drawn from the snapshot stream
/// so training draws are unaffected.
pub fn snapshot_paths(model: &Model, seed: u64, epoch: usize) -> Vec<PathSnapshot> {
    let mut rng = snapshot_rng(seed, epoch);
    model
        .branches
        .iter()
        .enumerate()
        .map(|(k, br)| {
            let eps = Tensor::vector(standard_normal_vec(&mut rng, model.cfg.t_len));
            let z = sample_start_raw(model.store.get(br.mu), model.store.get(br.log_sigma), &eps);
            let path = reverse_sample_path_raw(&model.store, &br.net, &model.schedule, &z, EPS_NUM);
            PathSnapshot { epoch, branch: k, path }
        })
        .collect()
}

/// Standardizes the raw mixture, stores the statistics on the model, and
/// trains from scratch. `truth` is only used for diagnostic correlations.
pub fn fit(model: &mut Model, y_raw: &Tensor, truth: Option<&Tensor>, cfg: &TrainConfig) -> Result<TrainReport> {
    if !y_raw.is_finite() {
        return Err(StradiffError::Data("mixture contains non-finite values".into()));
    }
    let stats = NormStats::fit(y_raw);
    let y_norm = stats.apply(y_raw);
    model.norm = Some(stats);
    let mut rng = rng_for(cfg.seed, STREAM_TRAIN);
    fit_from(model, &y_norm, truth, cfg, &mut rng, 0)
}

/// Continues training from `start_epoch` with an already-positioned training
/// RNG; running epochs 0..k and then k..N this way is identical to one
/// uninterrupted 0..N run.
pub fn fit_from(
    model: &mut Model,
    y_norm: &Tensor,
    truth: Option<&Tensor>,
    cfg: &TrainConfig,
    rng: &mut ChaCha20Rng,
    start_epoch: usize,
) -> Result<TrainReport> {
    let n = model.branches.len();
    let mut rows = Vec::with_capacity(cfg.epochs.saturating_sub(start_epoch));
    let mut snapshots = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        if cfg.snapshot_epochs.contains(&epoch) {
            snapshots.extend(snapshot_paths(model, cfg.seed, epoch));
        }
        let ell = model.length_scales();
        let ell_rescaled = ell.iter().map(|&e| rescale_ell(e, model.cfg.t_len)).collect();
        let (losses, s_sample) = train_step(model, y_norm, cfg, rng, epoch)?;
        let corr = match truth {
            Some(t) => match_sources(&s_sample, t).correlations,
            None => vec![f64::NAN; n],
        };
        rows.push(ReportRow { losses, corr, ell, ell_rescaled });
    }
    if cfg.epochs > start_epoch || rows.is_empty() {
        snapshots.extend(snapshot_paths(model, cfg.seed, cfg.epochs));
    }
    Ok(TrainReport { rows, snapshots })
}
