//! Command-line front end: generate synthetic mixtures, train the separator,
//! estimate sources from a checkpoint, and run the built-in selfcheck.
//!
//! Exit codes: 0 success, 1 usage/config, 2 data error, 3 numerical fault.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use stradiff::checkpoint::{load_checkpoint, restore_model, save_checkpoint};
use stradiff::config::RunConfig;
use stradiff::csvio;
use stradiff::datagen;
use stradiff::error::{Result, StradiffError};
use stradiff::estimate::{match_sources, mc_estimate, plug_in_reconstruction};
use stradiff::model::Model;
use stradiff::rng::{rng_for, RngSnapshot, STREAM_MC, STREAM_TRAIN};
use stradiff::selfcheck;
use stradiff::tensor::Shape;
use stradiff::trainer::{fit_from, TrainReport};

#[derive(Parser)]
#[command(
    name = "stradiff",
    version,
    about = "Blind source separation via per-source reverse diffusion with adaptive smoothness priors"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write synthetic sources, mixture, and true mixing to the output directory
    Generate(CommonArgs),
    /// Train on mixture.csv in the output directory, write report/checkpoint/paths
    Train(TrainArgs),
    /// Monte Carlo source estimation from a checkpoint
    Estimate(CommonArgs),
    /// Run the built-in verification suites
    Selfcheck(SelfcheckArgs),
}

/// Every config key is mirrored as a long flag with the same name; CLI values
/// override the config file, which overrides defaults. STRADIFF_SEED
/// overrides the seed last.
#[derive(Args, Default)]
#[command(rename_all = "snake_case")]
struct Overrides {
    #[arg(long, value_name = "N")]
    t_len: Option<String>,
    #[arg(long, value_name = "N")]
    n: Option<String>,
    #[arg(long, value_name = "N")]
    m: Option<String>,
    #[arg(long, value_name = "linear|nonlinear")]
    mixing: Option<String>,
    #[arg(long, value_name = "X")]
    noise_std: Option<String>,
    #[arg(long, value_name = "N")]
    seed: Option<String>,
    #[arg(long, value_name = "X")]
    sigma_f2: Option<String>,
    #[arg(long, value_name = "X")]
    xi: Option<String>,
    #[arg(long, value_name = "N")]
    l: Option<String>,
    #[arg(long, value_name = "X")]
    beta_min: Option<String>,
    #[arg(long, value_name = "X")]
    beta_max: Option<String>,
    #[arg(long, value_name = "N")]
    hidden: Option<String>,
    #[arg(long, value_name = "X")]
    lambda_prior: Option<String>,
    #[arg(long, value_name = "X")]
    lambda_diff: Option<String>,
    #[arg(long, value_name = "X")]
    lambda_kl: Option<String>,
    #[arg(long, value_name = "X")]
    nu_y: Option<String>,
    #[arg(long, value_name = "N")]
    epochs: Option<String>,
    #[arg(long, value_name = "X")]
    lr: Option<String>,
    #[arg(long, value_name = "X")]
    beta1: Option<String>,
    #[arg(long, value_name = "X")]
    beta2: Option<String>,
    #[arg(long, value_name = "X")]
    adam_eps: Option<String>,
    #[arg(long, value_name = "E0,E1,...")]
    snapshot_epochs: Option<String>,
    #[arg(long, value_name = "R")]
    draws: Option<String>,
    #[arg(long, value_name = "DIR")]
    outdir: Option<String>,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        [
            ("t_len", &self.t_len),
            ("n", &self.n),
            ("m", &self.m),
            ("mixing", &self.mixing),
            ("noise_std", &self.noise_std),
            ("seed", &self.seed),
            ("sigma_f2", &self.sigma_f2),
            ("xi", &self.xi),
            ("l", &self.l),
            ("beta_min", &self.beta_min),
            ("beta_max", &self.beta_max),
            ("hidden", &self.hidden),
            ("lambda_prior", &self.lambda_prior),
            ("lambda_diff", &self.lambda_diff),
            ("lambda_kl", &self.lambda_kl),
            ("nu_y", &self.nu_y),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("adam_eps", &self.adam_eps),
            ("snapshot_epochs", &self.snapshot_epochs),
            ("draws", &self.draws),
            ("outdir", &self.outdir),
            ("checkpoint", &self.checkpoint),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
        .collect()
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (flat key = value with [sections])
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Resume from a checkpoint written by a previous train run
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SelfcheckArgs {
    /// Seed for the randomized suites
    #[arg(long, default_value = "0")]
    seed: u64,
}

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).map_err(|e| StradiffError::io(path.display().to_string(), e))?;
        cfg.apply_text(&text)?;
    }
    for (key, value) in args.overrides.pairs() {
        cfg.set_key(key, value)?;
    }
    cfg.apply_env_seed(std::env::var("STRADIFF_SEED").ok().as_deref())?;
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_outdir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.outdir)
        .map_err(|e| StradiffError::io(cfg.outdir.display().to_string(), e))
}

fn cmd_generate(args: &CommonArgs) -> Result<()> {
    let cfg = load_config(args)?;
    ensure_outdir(&cfg)?;
    let spec = cfg.to_experiment_spec();
    let (sources, mixture, truth) = datagen::generate(&spec)?;
    csvio::write_time_matrix(&cfg.outdir.join("sources.csv"), "s", &sources)?;
    csvio::write_time_matrix(&cfg.outdir.join("mixture.csv"), "y", &mixture)?;
    csvio::write_matrix(&cfg.outdir.join("mixing.csv"), "a", &truth.a)?;
    if let Some(b) = &truth.b {
        csvio::write_matrix(&cfg.outdir.join("mixing_b.csv"), "b", b)?;
    }
    println!(
        "generated {} samples, {} sources, {} channels ({} mixing) in {}",
        cfg.t_len,
        cfg.n,
        cfg.m,
        cfg.mixing.as_str(),
        cfg.outdir.display()
    );
    Ok(())
}

/// Model-shape keys that a resumed run must not change; training-schedule
/// keys (epochs, rates, weights, io) may differ.
const RESUME_FIXED_KEYS: &[&str] =
    &["t_len", "n", "m", "mixing", "seed", "sigma_f2", "xi", "l", "beta_min", "beta_max", "hidden"];

fn write_train_outputs(cfg: &RunConfig, report: &TrainReport, n: usize) -> Result<()> {
    csvio::write_report(&cfg.outdir.join("report.csv"), &report.rows, n)?;
    for snap in &report.snapshots {
        let name = csvio::path_file_name(snap.epoch, snap.branch);
        csvio::write_path(&cfg.outdir.join(name), snap)?;
    }
    Ok(())
}

fn load_mixture(cfg: &RunConfig) -> Result<(stradiff::tensor::Tensor, Option<stradiff::tensor::Tensor>)> {
    let mixture_path = cfg.outdir.join("mixture.csv");
    let y = csvio::read_time_matrix(&mixture_path)?;
    let (t_len, m) = match y.shape {
        Shape::Matrix(t, m) => (t, m),
        _ => unreachable!(),
    };
    if (t_len, m) != (cfg.t_len, cfg.m) {
        return Err(StradiffError::Data(format!(
            "{} holds a {}x{} mixture but the config expects {}x{}",
            mixture_path.display(),
            t_len,
            m,
            cfg.t_len,
            cfg.m
        )));
    }
    let truth_path = cfg.outdir.join("sources.csv");
    let truth = if truth_path.exists() { Some(csvio::read_time_matrix(&truth_path)?) } else { None };
    if let Some(t) = &truth {
        if t.shape != Shape::Matrix(cfg.t_len, cfg.n) {
            return Err(StradiffError::Data(format!(
                "{} does not match the configured {}x{} source layout",
                truth_path.display(),
                cfg.t_len,
                cfg.n
            )));
        }
    }
    Ok((y, truth))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (cfg, mut model, mut rng, start_epoch) = match &args.resume {
        None => {
            let cfg = load_config(&args.common)?;
            let model = Model::init(cfg.to_model_config(), cfg.seed)?;
            let rng = rng_for(cfg.seed, STREAM_TRAIN);
            (cfg, model, rng, 0)
        }
        Some(path) => {
            let loaded = load_checkpoint(path)?;
            let (model, echo_cfg, rng) = restore_model(&loaded)?;
            // Start from the echoed config, then apply this invocation's
            // explicit overrides; shape keys must stay identical.
            let mut cfg = echo_cfg.clone();
            for (key, value) in args.common.overrides.pairs() {
                cfg.set_key(key, value)?;
            }
            cfg.apply_env_seed(std::env::var("STRADIFF_SEED").ok().as_deref())?;
            cfg.validate()?;
            for key in RESUME_FIXED_KEYS {
                let before = render_key(&echo_cfg, key);
                let after = render_key(&cfg, key);
                if before != after {
                    return Err(StradiffError::Config(format!(
                        "cannot change {key} on resume ({before} -> {after}); start a fresh run instead"
                    )));
                }
            }
            if cfg.epochs < loaded.epoch {
                return Err(StradiffError::Config(format!(
                    "checkpoint is at epoch {}, but epochs = {}",
                    loaded.epoch, cfg.epochs
                )));
            }
            (cfg, model, rng, loaded.epoch)
        }
    };

    ensure_outdir(&cfg)?;
    let (y_raw, truth) = load_mixture(&cfg)?;
    if !y_raw.is_finite() {
        return Err(StradiffError::Data("mixture contains non-finite values".into()));
    }
    let train_cfg = cfg.to_train_config();
    let y_norm = match (&args.resume, &model.norm) {
        (Some(_), Some(stats)) => stats.apply(&y_raw),
        _ => {
            let stats = stradiff::model::NormStats::fit(&y_raw);
            let y_norm = stats.apply(&y_raw);
            model.norm = Some(stats);
            y_norm
        }
    };
    let report = fit_from(&mut model, &y_norm, truth.as_ref(), &train_cfg, &mut rng, start_epoch)?;
    write_train_outputs(&cfg, &report, cfg.n)?;
    save_checkpoint(
        &cfg.checkpoint_path(),
        &model,
        &cfg.render(),
        cfg.epochs,
        &RngSnapshot::capture(&rng),
    )?;

    match report.rows.last() {
        Some(last) => {
            let corr = last
                .corr
                .iter()
                .map(|c| format!("{c:.4}"))
                .collect::<Vec<_>>()
                .join(" ");
            println!(
                "trained epochs {}..{}: total {:.6e}, rec {:.6e}, corr [{}]",
                start_epoch, cfg.epochs, last.losses.total, last.losses.rec, corr
            );
        }
        None => println!("nothing to train: checkpoint already at epoch {}", cfg.epochs),
    }
    println!("wrote {} and {}", cfg.outdir.join("report.csv").display(), cfg.checkpoint_path().display());
    Ok(())
}

fn render_key(cfg: &RunConfig, key: &str) -> String {
    // The canonical render has one `key = value` line per key.
    cfg.render()
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap_or_default()
}

fn cmd_estimate(args: &CommonArgs) -> Result<()> {
    // The checkpoint echo supplies the run configuration; explicit flags
    // (draws, outdir, seed, ...) override it.
    let mut probe = RunConfig::default();
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).map_err(|e| StradiffError::io(path.display().to_string(), e))?;
        probe.apply_text(&text)?;
    }
    for (key, value) in args.overrides.pairs() {
        probe.set_key(key, value)?;
    }
    let ckpt_path = probe.checkpoint_path();
    let loaded = load_checkpoint(&ckpt_path)?;
    let (model, echo_cfg, _train_rng) = restore_model(&loaded)?;
    let mut cfg = echo_cfg;
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).map_err(|e| StradiffError::io(path.display().to_string(), e))?;
        cfg.apply_text(&text)?;
    }
    for (key, value) in args.overrides.pairs() {
        cfg.set_key(key, value)?;
    }
    cfg.apply_env_seed(std::env::var("STRADIFF_SEED").ok().as_deref())?;
    cfg.validate()?;
    ensure_outdir(&cfg)?;

    let mut rng = rng_for(cfg.seed, STREAM_MC);
    let est = mc_estimate(&model, cfg.draws, &mut rng);

    let truth_path = cfg.outdir.join("sources.csv");
    let truth = if truth_path.exists() { Some(csvio::read_time_matrix(&truth_path)?) } else { None };
    let matched = truth.as_ref().map(|t| (t, match_sources(&est.mean, t)));

    csvio::write_estimate(
        &cfg.outdir.join("estimate.csv"),
        &est,
        matched.as_ref().map(|(t, m)| (*t, m)),
    )?;
    if let Some((_, m)) = &matched {
        csvio::write_match_summary(&cfg.outdir.join("match_summary.csv"), m)?;
    }
    let recon = plug_in_reconstruction(&model, &est.mean);
    csvio::write_time_matrix(&cfg.outdir.join("reconstruction.csv"), "y", &recon)?;

    match &matched {
        Some((_, m)) => println!(
            "estimated {} draws: mean matched correlation {:.4} (per source: {})",
            cfg.draws,
            m.mean_corr,
            m.correlations.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>().join(" ")
        ),
        None => println!("estimated {} draws (no ground truth found, match summary omitted)", cfg.draws),
    }
    Ok(())
}

fn cmd_selfcheck(args: &SelfcheckArgs) -> Result<()> {
    let results = selfcheck::run_all(args.seed);
    let mut all_pass = true;
    for r in &results {
        println!("{}", r.verdict_line());
        all_pass &= r.passed;
    }
    if all_pass {
        Ok(())
    } else {
        Err(StradiffError::NumericalFault { context: "selfcheck failed".into() })
    }
}

fn run() -> Result<()> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let is_help =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            std::process::exit(if is_help { 0 } else { 1 });
        }
    };
    match &cli.cmd {
        Cmd::Generate(args) => cmd_generate(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Estimate(args) => cmd_estimate(args),
        Cmd::Selfcheck(args) => cmd_selfcheck(args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
