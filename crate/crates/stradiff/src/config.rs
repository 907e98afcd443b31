//! Run configuration: one flat key = value file with sections, every key
//! overridable from the command line, and a canonical rendering used as the
//! checkpoint's config echo.
//!
//! Precedence, lowest to highest: built-in defaults, config file, CLI
//! overrides, then the STRADIFF_SEED environment variable (seed only).

use crate::datagen::{ExperimentSpec, MixingKind};
use crate::diffusion::default_beta_range;
use crate::error::{Result, StradiffError};
use crate::gp::GpConfig;
use crate::model::ModelConfig;
use crate::optim::AdamConfig;
use crate::trainer::TrainConfig;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub t_len: usize,
    pub n: usize,
    pub m: usize,
    pub mixing: MixingKind,
    pub noise_std: f64,
    pub seed: u64,

    pub sigma_f2: f64,
    pub xi: f64,

    pub l: usize,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    pub hidden: usize,

    pub lambda_prior: f64,
    pub lambda_diff: f64,
    pub lambda_kl: f64,
    pub nu_y: f64,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub snapshot_epochs: Vec<usize>,

    pub draws: usize,

    pub outdir: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t_len: 1000,
            n: 3,
            m: 3,
            mixing: MixingKind::Linear,
            noise_std: 0.0,
            seed: 0,
            sigma_f2: 1.0,
            xi: 1e-4,
            l: 20,
            beta_min: None,
            beta_max: None,
            hidden: 128,
            lambda_prior: 0.1,
            lambda_diff: 1.0,
            lambda_kl: 0.01,
            nu_y: 1.0,
            epochs: 10_000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            snapshot_epochs: vec![0, 3000],
            draws: 100,
            outdir: PathBuf::from("out"),
            checkpoint: None,
        }
    }
}

/// (key, section) for every recognized key, in canonical render order.
pub const KEYS: &[(&str, &str)] = &[
    ("t_len", "experiment"),
    ("n", "experiment"),
    ("m", "experiment"),
    ("mixing", "experiment"),
    ("noise_std", "experiment"),
    ("seed", "experiment"),
    ("sigma_f2", "gp"),
    ("xi", "gp"),
    ("l", "diffusion"),
    ("beta_min", "diffusion"),
    ("beta_max", "diffusion"),
    ("hidden", "diffusion"),
    ("lambda_prior", "train"),
    ("lambda_diff", "train"),
    ("lambda_kl", "train"),
    ("nu_y", "train"),
    ("epochs", "train"),
    ("lr", "train"),
    ("beta1", "train"),
    ("beta2", "train"),
    ("adam_eps", "train"),
    ("snapshot_epochs", "train"),
    ("draws", "estimate"),
    ("outdir", "io"),
    ("checkpoint", "io"),
];

fn bad_value(key: &str, value: &str) -> StradiffError {
    StradiffError::Config(format!("cannot parse value {value:?} for key {key}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| bad_value(key, value))
}

impl RunConfig {
    /// Applies one key = value pair; the single authority for both file keys
    /// and CLI overrides.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "t_len" => self.t_len = parse_num(key, v)?,
            "n" => self.n = parse_num(key, v)?,
            "m" => self.m = parse_num(key, v)?,
            "mixing" => self.mixing = MixingKind::parse(v)?,
            "noise_std" => self.noise_std = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "sigma_f2" => self.sigma_f2 = parse_num(key, v)?,
            "xi" => self.xi = parse_num(key, v)?,
            "l" => self.l = parse_num(key, v)?,
            "beta_min" => self.beta_min = Some(parse_num(key, v)?),
            "beta_max" => self.beta_max = Some(parse_num(key, v)?),
            "hidden" => self.hidden = parse_num(key, v)?,
            "lambda_prior" => self.lambda_prior = parse_num(key, v)?,
            "lambda_diff" => self.lambda_diff = parse_num(key, v)?,
            "lambda_kl" => self.lambda_kl = parse_num(key, v)?,
            "nu_y" => self.nu_y = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "snapshot_epochs" => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    let part = part.trim();
                    if !part.is_empty() {
                        out.push(parse_num(key, part)?);
                    }
                }
                self.snapshot_epochs = out;
            }
            "draws" => self.draws = parse_num(key, v)?,
            "outdir" => self.outdir = PathBuf::from(v),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            _ => return Err(StradiffError::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Parses config file text on top of the defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(section) = line.strip_prefix('[') {
                let Some(name) = section.strip_suffix(']') else {
                    return Err(StradiffError::Config(format!("line {}: malformed section {line:?}", idx + 1)));
                };
                if !KEYS.iter().any(|(_, s)| *s == name.trim()) {
                    return Err(StradiffError::Config(format!("line {}: unknown section [{}]", idx + 1, name.trim())));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(StradiffError::Config(format!("line {}: expected key = value, got {line:?}", idx + 1)));
            };
            self.set_key(key.trim(), value)
                .map_err(|e| StradiffError::Config(format!("line {}: {e}", idx + 1)))?;
        }
        Ok(())
    }

    /// Seed override from the environment; the value is passed in so the
    /// function stays pure.
    pub fn apply_env_seed(&mut self, var: Option<&str>) -> Result<()> {
        if let Some(v) = var {
            self.seed = v
                .trim()
                .parse::<u64>()
                .map_err(|_| StradiffError::Config(format!("STRADIFF_SEED must be an unsigned integer, got {v:?}")))?;
        }
        Ok(())
    }

    /// β range: explicit values win, otherwise scaled defaults for L steps.
    pub fn resolved_betas(&self) -> (f64, f64) {
        let (dmin, dmax) = default_beta_range(self.l);
        (self.beta_min.unwrap_or(dmin), self.beta_max.unwrap_or(dmax))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.outdir.join("checkpoint.bin"))
    }

    pub fn validate(&self) -> Result<()> {
        self.to_experiment_spec().validate()?;
        self.to_train_config().validate()?;
        if self.hidden == 0 {
            return Err(StradiffError::Config("hidden width must be at least 1".into()));
        }
        if !(self.sigma_f2 > 0.0) {
            return Err(StradiffError::Config("sigma_f2 must be positive".into()));
        }
        if !(self.xi > 0.0) {
            return Err(StradiffError::Config("jitter xi must be positive".into()));
        }
        if self.draws < 2 {
            return Err(StradiffError::Config("draws must be at least 2".into()));
        }
        if !(self.lr > 0.0) || !(self.adam_eps > 0.0) {
            return Err(StradiffError::Config("lr and adam_eps must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(StradiffError::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        let (bmin, bmax) = self.resolved_betas();
        crate::diffusion::make_schedule(self.l, bmin, bmax)?;
        Ok(())
    }

    pub fn to_experiment_spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            t_len: self.t_len,
            n: self.n,
            m: self.m,
            mixing_kind: self.mixing,
            noise_std: self.noise_std,
            seed: self.seed,
        }
    }

    pub fn to_model_config(&self) -> ModelConfig {
        let (beta_min, beta_max) = self.resolved_betas();
        ModelConfig {
            t_len: self.t_len,
            n: self.n,
            m: self.m,
            mixing_kind: self.mixing,
            hidden: self.hidden,
            l: self.l,
            beta_min,
            beta_max,
            gp: GpConfig { sigma_f2: self.sigma_f2, xi: self.xi },
        }
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda_prior: self.lambda_prior,
            lambda_diff: self.lambda_diff,
            lambda_kl: self.lambda_kl,
            nu_y: self.nu_y,
            epochs: self.epochs,
            adam: AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps },
            seed: self.seed,
            snapshot_epochs: self.snapshot_epochs.clone(),
            freeze_mixing: false,
        }
    }

    /// Canonical text form; parsing it back reproduces this config exactly.
    /// β values are rendered resolved so the echo is self-contained.
    pub fn render(&self) -> String {
        let (bmin, bmax) = self.resolved_betas();
        let snapshots =
            self.snapshot_epochs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut section = "";
        for (key, sec) in KEYS {
            if *sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                writeln!(out, "[{sec}]").unwrap();
                section = sec;
            }
            let value = match *key {
                "t_len" => self.t_len.to_string(),
                "n" => self.n.to_string(),
                "m" => self.m.to_string(),
                "mixing" => self.mixing.as_str().to_string(),
                "noise_std" => self.noise_std.to_string(),
                "seed" => self.seed.to_string(),
                "sigma_f2" => self.sigma_f2.to_string(),
                "xi" => self.xi.to_string(),
                "l" => self.l.to_string(),
                "beta_min" => bmin.to_string(),
                "beta_max" => bmax.to_string(),
                "hidden" => self.hidden.to_string(),
                "lambda_prior" => self.lambda_prior.to_string(),
                "lambda_diff" => self.lambda_diff.to_string(),
                "lambda_kl" => self.lambda_kl.to_string(),
                "nu_y" => self.nu_y.to_string(),
                "epochs" => self.epochs.to_string(),
                "lr" => self.lr.to_string(),
                "beta1" => self.beta1.to_string(),
                "beta2" => self.beta2.to_string(),
                "adam_eps" => self.adam_eps.to_string(),
                "snapshot_epochs" => snapshots.clone(),
                "draws" => self.draws.to_string(),
                "outdir" => self.outdir.display().to_string(),
                "checkpoint" => self.checkpoint_path().display().to_string(),
                other => unreachable!("KEYS lists unhandled key {other}"),
            };
            writeln!(out, "{key} = {value}").unwrap();
        }
        out
    }
}
