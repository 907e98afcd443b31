//! Verification gate: one test per headline behavior, each at its stated
//! tolerance. The default suite runs the reduced-scale configs (t_len 256,
//! 3000 epochs) and the analytic checks; the full-scale counterparts
//! (t_len 1000, 10000 epochs, roughly an hour each) carry `#[ignore]` and
//! run with `cargo test --test acceptance -- --ignored`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, RngExt};

use stradiff::checkpoint::{load_checkpoint, restore_model};
use stradiff::config::RunConfig;
use stradiff::csvio;
use stradiff::diffusion::{forward_noise_raw, make_schedule, reverse_sample_path_raw, reverse_sample_raw, EpsilonNet};
use stradiff::estimate::{match_sources, mc_estimate, pearson, MatchResult, SourceEstimate};
use stradiff::gp::{gp_branch_closed_form, gp_penalty_closed_form, gp_penalty_tape, kernel_spec, time_grid, GpConfig};
use stradiff::latent::{kl_penalty_raw, kl_penalty_tape};
use stradiff::model::Model;
use stradiff::tape::ParamStore;
use stradiff::rng::{rng_for, standard_normal_vec, STREAM_MC};
use stradiff::tape::{SeKernelSpec, Tape};
use stradiff::tensor::{Shape, Tensor};

// ---------------------------------------------------------------- plumbing

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stradiff"));
    c.env_remove("STRADIFF_SEED");
    c
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn work_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("stradiff-acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

struct TrainedRun {
    dir: PathBuf,
    train_seconds: f64,
    corr: Vec<f64>,
    mean_corr: f64,
}

/// Generates data and trains with a shipped config file, returning the final
/// report row. Only the output directory is overridden.
fn run_shipped_config(cfg_name: &str, dir_name: &str) -> TrainedRun {
    let dir = work_dir(dir_name);
    let cfg = config_path(cfg_name);
    let out = bin().arg("generate").arg("--config").arg(&cfg).arg("--outdir").arg(&dir).output().unwrap();
    assert!(out.status.success(), "generate failed: {}", String::from_utf8_lossy(&out.stderr));
    let start = Instant::now();
    let out = bin().arg("train").arg("--config").arg(&cfg).arg("--outdir").arg(&dir).output().unwrap();
    let train_seconds = start.elapsed().as_secs_f64();
    assert!(out.status.success(), "train failed: {}", String::from_utf8_lossy(&out.stderr));
    let (corr, mean_corr) = final_correlations(&dir);
    TrainedRun { dir, train_seconds, corr, mean_corr }
}

fn final_correlations(dir: &Path) -> (Vec<f64>, f64) {
    let (headers, data) = csvio::read_matrix(&dir.join("report.csv")).unwrap();
    let rows = match data.shape {
        Shape::Matrix(r, _) => r,
        _ => unreachable!(),
    };
    let corr: Vec<f64> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("corr"))
        .map(|(i, _)| data.at(rows - 1, i))
        .collect();
    assert!(!corr.is_empty());
    let mean = corr.iter().sum::<f64>() / corr.len() as f64;
    (corr, mean)
}

static CI_LINEAR: OnceLock<TrainedRun> = OnceLock::new();

fn ci_linear() -> &'static TrainedRun {
    CI_LINEAR.get_or_init(|| run_shipped_config("linear_ci.cfg", "linear_ci"))
}

static FULL_LINEAR: OnceLock<TrainedRun> = OnceLock::new();

fn full_linear() -> &'static TrainedRun {
    FULL_LINEAR.get_or_init(|| run_shipped_config("linear_full.cfg", "linear_full"))
}

/// Checkpoint plus ground truth, re-estimated with the Monte Carlo stream.
struct MatchedRun {
    model: Model,
    cfg: RunConfig,
    truth: Tensor,
    est: SourceEstimate,
    matching: MatchResult,
}

fn load_matched(dir: &Path, draws: usize) -> MatchedRun {
    let loaded = load_checkpoint(&dir.join("checkpoint.bin")).unwrap();
    let (model, cfg, _) = restore_model(&loaded).unwrap();
    let truth = csvio::read_time_matrix(&dir.join("sources.csv")).unwrap();
    let mut rng = rng_for(cfg.seed, STREAM_MC);
    let est = mc_estimate(&model, draws, &mut rng);
    let matching = match_sources(&est.mean, &truth);
    MatchedRun { model, cfg, truth, est, matching }
}

fn column(t: &Tensor, j: usize) -> Vec<f64> {
    let rows = match t.shape {
        Shape::Matrix(r, _) => r,
        _ => unreachable!(),
    };
    (0..rows).map(|i| t.at(i, j)).collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) }
}

fn std_dev(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Maximum-likelihood length-scale of a single trajectory under the same
/// kernel family the model trains with; this is the reference the learned
/// per-branch length-scales are compared against.
fn ml_length_scale(s: &[f64], sigma_f2: f64, xi: f64) -> f64 {
    let spec = SeKernelSpec::new(time_grid(s.len()), sigma_f2, xi);
    let s = Tensor::vector(s.to_vec());
    let value = |ell: f64| {
        let gamma = (ell - 1e-6).ln();
        gp_branch_closed_form(gamma, &s, &spec).unwrap().value
    };
    let mut lo = (1e-3f64).ln();
    let mut hi = (0.5f64).ln();
    for _ in 0..3 {
        let grid: Vec<f64> = (0..40).map(|i| (lo + (hi - lo) * i as f64 / 39.0).exp()).collect();
        let best = (0..40).min_by(|&a, &b| value(grid[a]).total_cmp(&value(grid[b]))).unwrap();
        lo = grid[best.saturating_sub(1)].ln();
        hi = grid[(best + 1).min(39)].ln();
    }
    (0.5 * (lo + hi)).exp()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom > 1e-6 { (a - b).abs() / denom } else { (a - b).abs() }
}

// ------------------------------------------------- separation (reduced CI)

#[test]
fn linear_separation_reaches_target_correlation() {
    let run = ci_linear();
    assert!(
        run.train_seconds < 600.0,
        "reduced linear run took {:.0}s, budget is 600s",
        run.train_seconds
    );
    assert!(
        run.mean_corr >= 0.90,
        "mean matched correlation {:.4} below 0.90 (per source: {:?})",
        run.mean_corr,
        run.corr
    );
}

#[test]
fn length_scales_adapt_to_source_smoothness() {
    let run = ci_linear();
    let art = load_matched(&run.dir, 100);
    let ells = art.model.length_scales();
    let n = art.matching.permutation.len();
    // Length-scale of the branch matched to each true source.
    let matched: Vec<f64> = (0..n).map(|j| ells[art.matching.permutation[j]]).collect();
    let refs: Vec<f64> = (0..n)
        .map(|j| ml_length_scale(&column(&art.truth, j), art.cfg.sigma_f2, art.cfg.xi))
        .collect();

    // At reduced scale the slowest-adapting branch may still be in transit,
    // so the checks here are the spread between the extremes and agreement
    // on which source is the smoothest; the full-scale test demands the
    // complete ordering with pairwise separation.
    let max = matched.iter().cloned().fold(f64::MIN, f64::max);
    let min = matched.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        max / min >= 1.2,
        "length-scale spread {max:.4}/{min:.4} = {:.3} below 1.2 (matched {matched:?})",
        max / min
    );
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    assert_eq!(
        argmax(&matched),
        argmax(&refs),
        "smoothest source mismatch: learned {matched:?}, reference {refs:?}"
    );
}

#[test]
fn nonlinear_mixing_degrades_but_still_separates() {
    let linear = ci_linear();
    let nonlinear = run_shipped_config("nonlinear_ci.cfg", "nonlinear_ci");
    assert!(
        nonlinear.mean_corr >= 0.70,
        "nonlinear mean matched correlation {:.4} below the reduced-scale floor 0.70",
        nonlinear.mean_corr
    );
    assert!(
        nonlinear.mean_corr < linear.mean_corr,
        "nonlinear mean {:.4} not below linear mean {:.4}",
        nonlinear.mean_corr,
        linear.mean_corr
    );
}

#[test]
fn uncertainty_bands_concentrate_around_matched_sources() {
    let run = ci_linear();
    let art = load_matched(&run.dir, 100);
    for j in 0..art.matching.permutation.len() {
        let k = art.matching.permutation[j];
        let mut stds = column(&art.est.std, k);
        let med = median(&mut stds);
        let amplitude = std_dev(&column(&art.truth, j));
        assert!(
            med < 0.05 * amplitude,
            "source {j}: median MC std {med:.4} not below 5% of amplitude {amplitude:.4}"
        );
    }
}

// ------------------------------------------------------- determinism

#[test]
fn identical_runs_produce_identical_outputs() {
    let run = ci_linear();
    let report = fs::read(run.dir.join("report.csv")).unwrap();
    let checkpoint = fs::read(run.dir.join("checkpoint.bin")).unwrap();
    // Retrain from the same inputs into the same directory; every output
    // must come back byte for byte.
    let out = bin()
        .arg("train")
        .arg("--config")
        .arg(config_path("linear_ci.cfg"))
        .arg("--outdir")
        .arg(&run.dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "retrain failed: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report, fs::read(run.dir.join("report.csv")).unwrap(), "report.csv changed between runs");
    assert_eq!(
        checkpoint,
        fs::read(run.dir.join("checkpoint.bin")).unwrap(),
        "checkpoint.bin changed between runs"
    );
}

// ------------------------------------------------------- analytic suites

#[test]
fn gp_gradients_match_closed_form_and_finite_differences() {
    let start = Instant::now();
    let mut rng = rng_for(17, 90);
    let mut worst_tape = 0.0f64;
    let mut worst_fd = 0.0f64;
    for _ in 0..50 {
        let t_len = 4 + (rng.next_u64() % 29) as usize; // 4..=32
        let n = 1 + (rng.next_u64() % 3) as usize;
        let spec = kernel_spec(t_len, &GpConfig::default());
        let gammas: Vec<f64> =
            (0..n).map(|_| -4.0 + 3.0 * (rng.next_u64() as f64 / u64::MAX as f64)).collect();
        let sources: Vec<Tensor> =
            (0..n).map(|_| Tensor::vector(standard_normal_vec(&mut rng, t_len))).collect();
        let closed = gp_penalty_closed_form(&gammas, &sources, &spec).unwrap();

        let mut store = ParamStore::new();
        let gamma_ids: Vec<usize> =
            (0..n).map(|k| store.add(format!("g{k}"), Tensor::scalar(gammas[k]))).collect();
        let source_ids: Vec<usize> =
            (0..n).map(|k| store.add(format!("s{k}"), sources[k].clone())).collect();
        let mut tape = Tape::new();
        let gamma_nodes: Vec<_> = gamma_ids.iter().map(|&id| tape.param(&store, id)).collect();
        let source_nodes: Vec<_> = source_ids.iter().map(|&id| tape.param(&store, id)).collect();
        let root = gp_penalty_tape(&mut tape, &gamma_nodes, &source_nodes, &spec).unwrap();
        assert!(rel_err(tape.value(root).as_scalar(), closed.value) <= 1e-10);

        let grads = tape.backward(root, &store);
        for k in 0..n {
            worst_tape =
                worst_tape.max(rel_err(grads.per_param[gamma_ids[k]].as_scalar(), closed.grad_gamma[k]));
            for (a, c) in grads.per_param[source_ids[k]].data.iter().zip(closed.grad_s[k].data.iter()) {
                worst_tape = worst_tape.max(rel_err(*a, *c));
            }
        }

        let h = 1e-5;
        for k in 0..n {
            let mut up = gammas.clone();
            up[k] += h;
            let mut dn = gammas.clone();
            dn[k] -= h;
            let fd = (gp_penalty_closed_form(&up, &sources, &spec).unwrap().value
                - gp_penalty_closed_form(&dn, &sources, &spec).unwrap().value)
                / (2.0 * h);
            worst_fd = worst_fd.max(rel_err(fd, closed.grad_gamma[k]));
            for i in 0..t_len {
                let mut up = sources.clone();
                up[k].data[i] += h;
                let mut dn = sources.clone();
                dn[k].data[i] -= h;
                let fd = (gp_penalty_closed_form(&gammas, &up, &spec).unwrap().value
                    - gp_penalty_closed_form(&gammas, &dn, &spec).unwrap().value)
                    / (2.0 * h);
                worst_fd = worst_fd.max(rel_err(fd, closed.grad_s[k].data[i]));
            }
        }
    }
    assert!(worst_tape <= 1e-8, "closed form vs tape rel err {worst_tape:.3e} exceeds 1e-8");
    assert!(worst_fd <= 1e-5, "vs finite differences rel err {worst_fd:.3e} exceeds 1e-5");
    assert!(start.elapsed().as_secs_f64() < 30.0, "gradient suite exceeded 30s");
}

#[test]
fn kl_penalty_nonnegative_with_exact_minimum() {
    let start = Instant::now();
    let mut rng = rng_for(18, 90);
    for _ in 0..1000 {
        let t_len = 1 + (rng.next_u64() % 16) as usize;
        let n = 1 + (rng.next_u64() % 3) as usize;
        let branches: Vec<(Tensor, Tensor)> = (0..n)
            .map(|_| {
                let mu = Tensor::vector(standard_normal_vec(&mut rng, t_len).iter().map(|v| 2.0 * v).collect());
                let ls = Tensor::vector(standard_normal_vec(&mut rng, t_len));
                (mu, ls)
            })
            .collect();
        let refs: Vec<(&Tensor, &Tensor)> = branches.iter().map(|(m, s)| (m, s)).collect();
        let v = kl_penalty_raw(&refs, t_len);
        assert!(v >= 0.0, "kl penalty {v} negative");
    }

    // Exact minimum at mu = 0, sigma = 1: value and every gradient entry
    // vanish to 1e-12.
    let t_len = 6;
    let mut store = ParamStore::new();
    let mu = store.add("mu", Tensor::zeros(Shape::Vector(t_len)));
    let ls = store.add("ls", Tensor::zeros(Shape::Vector(t_len)));
    let mut tape = Tape::new();
    let mu_n = tape.param(&store, mu);
    let ls_n = tape.param(&store, ls);
    let root = kl_penalty_tape(&mut tape, &[mu_n], &[ls_n], t_len);
    assert!(tape.value(root).as_scalar().abs() < 1e-12);
    let grads = tape.backward(root, &store);
    for id in [mu, ls] {
        for g in &grads.per_param[id].data {
            assert!(g.abs() < 1e-12, "gradient {g} at the minimizer");
        }
    }
    assert!(start.elapsed().as_secs_f64() < 5.0, "kl suite exceeded 5s");
}

#[test]
fn single_step_denoising_mc_matches_stratified_average() {
    let start = Instant::now();
    let l = 5;
    let t_len = 8;
    let schedule = make_schedule(l, 0.02, 0.3).unwrap();
    let mut rng = rng_for(19, 90);
    let mut store = ParamStore::new();
    let net = EpsilonNet::init(&mut store, "net", t_len, 16, &mut rng);
    // The output layer initializes to zero; give it structure so the term
    // actually depends on tau and the noise.
    for id in [net.w3, net.b3] {
        for v in &mut store.get_mut(id).data {
            *v = 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }
    let s = Tensor::vector(standard_normal_vec(&mut rng, t_len));

    let term = |store: &ParamStore, tau: usize, eta: &Tensor| -> f64 {
        let x = forward_noise_raw(&s, eta, &schedule, tau);
        let e = net.forward_raw(store, &x, tau as f64 / l as f64);
        e.data.iter().zip(eta.data.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t_len as f64
    };

    // Uniform tau sampling, exactly as the trainer draws it.
    let draws = 20_000;
    let mut uniform = Vec::with_capacity(draws);
    for _ in 0..draws {
        let tau = 1 + (rng.next_u64() % l as u64) as usize;
        let eta = Tensor::vector(standard_normal_vec(&mut rng, t_len));
        uniform.push(term(&store, tau, &eta));
    }
    let mean_u = uniform.iter().sum::<f64>() / draws as f64;
    let var_u = uniform.iter().map(|v| (v - mean_u) * (v - mean_u)).sum::<f64>() / (draws - 1) as f64;

    // Stratified: every tau visited with the same total draw budget.
    let per_tau = draws / l;
    let mut mean_s = 0.0;
    let mut var_s = 0.0;
    for tau in 1..=l {
        let vals: Vec<f64> = (0..per_tau)
            .map(|_| {
                let eta = Tensor::vector(standard_normal_vec(&mut rng, t_len));
                term(&store, tau, &eta)
            })
            .collect();
        let m = vals.iter().sum::<f64>() / per_tau as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (per_tau - 1) as f64;
        mean_s += m / l as f64;
        var_s += v / per_tau as f64 / (l * l) as f64;
    }

    let se = (var_u / draws as f64 + var_s).sqrt();
    let diff = (mean_u - mean_s).abs();
    assert!(
        diff <= 4.0 * se,
        "uniform-tau mean {mean_u:.6} vs stratified mean {mean_s:.6}: |diff| {diff:.2e} > 4 SE {:.2e}",
        4.0 * se
    );
    assert!(start.elapsed().as_secs_f64() < 60.0, "denoising suite exceeded 60s");
}

#[test]
fn reverse_sampler_telescopes_to_scaled_start() {
    let mut rng = rng_for(20, 90);
    let l = 20;
    let t_len = 12;
    let schedule = make_schedule(l, 0.005, 0.2).unwrap();
    let mut store = ParamStore::new();
    // Freshly initialized networks have a zero output layer, so the noise
    // prediction is identically zero and the reverse recursion telescopes.
    let net = EpsilonNet::init(&mut store, "net", t_len, 16, &mut rng);
    let z = Tensor::vector(standard_normal_vec(&mut rng, t_len));

    let out = reverse_sample_raw(&store, &net, &schedule, &z, 0.0);
    let scale = 1.0 / schedule.sqrt_alpha_bar(l);
    for (o, zi) in out.data.iter().zip(z.data.iter()) {
        assert!((o - scale * zi).abs() <= 1e-10, "telescoping violated: {o} vs {}", scale * zi);
    }

    let path = reverse_sample_path_raw(&store, &net, &schedule, &z, 0.0);
    assert_eq!(path.len(), l + 1, "path must hold L+1 states");
    assert_eq!(path[0].0, l);
    assert_eq!(path[0].1.data, z.data, "path starts at the noisy start");
    assert_eq!(path[l].0, 0);
    assert_eq!(path[l].1.data, out.data, "path ends at the clean sample");
}

#[test]
fn source_matching_agrees_with_exhaustive_search() {
    // Independent exhaustive scorer: recursively enumerate permutations and
    // take the best mean absolute correlation.
    fn permutations(n: usize) -> Vec<Vec<usize>> {
        fn go(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == used.len() {
                out.push(cur.clone());
                return;
            }
            for i in 0..used.len() {
                if !used[i] {
                    used[i] = true;
                    cur.push(i);
                    go(cur, used, out);
                    cur.pop();
                    used[i] = false;
                }
            }
        }
        let mut out = Vec::new();
        go(&mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    let mut rng = rng_for(21, 90);
    let n = 3;
    let t_len = 40;
    for inst in 0..200 {
        let est = Tensor::from_cols(
            &(0..n).map(|_| Tensor::vector(standard_normal_vec(&mut rng, t_len))).collect::<Vec<_>>(),
        );
        // Half the instances plant a signed permutation with noise so the
        // optimum is meaningful; the rest stay unstructured.
        let truth = if inst % 2 == 0 {
            let perm = [inst % 3, (inst + 1) % 3, (inst + 2) % 3];
            let cols: Vec<Tensor> = (0..n)
                .map(|j| {
                    let sign = if (inst / 3) % 2 == 0 { 1.0 } else { -1.0 };
                    let noise = standard_normal_vec(&mut rng, t_len);
                    Tensor::vector(
                        column(&est, perm[j]).iter().zip(noise.iter()).map(|(v, e)| sign * v + 0.3 * e).collect(),
                    )
                })
                .collect();
            Tensor::from_cols(&cols)
        } else {
            Tensor::from_cols(
                &(0..n).map(|_| Tensor::vector(standard_normal_vec(&mut rng, t_len))).collect::<Vec<_>>(),
            )
        };

        let result = match_sources(&est, &truth);
        let mut best = f64::MIN;
        for perm in permutations(n) {
            let score = (0..n)
                .map(|j| pearson(&column(&truth, j), &column(&est, perm[j])).abs())
                .sum::<f64>()
                / n as f64;
            best = best.max(score);
        }
        assert_eq!(
            result.mean_corr, best,
            "instance {inst}: matcher score {} differs from exhaustive best {}",
            result.mean_corr, best
        );
    }
}

// ------------------------------------------------------- full-scale runs

#[test]
#[ignore = "roughly an hour of training; run with -- --ignored"]
fn full_scale_linear_separation() {
    let run = full_linear();
    assert!(
        run.corr.iter().all(|&c| c >= 0.95),
        "matched correlations {:?} must all reach 0.95",
        run.corr
    );
    assert!(run.mean_corr >= 0.97, "mean matched correlation {:.4} below 0.97", run.mean_corr);
}

#[test]
#[ignore = "roughly an hour of training; run with -- --ignored"]
fn full_scale_length_scale_ordering() {
    let run = full_linear();
    let art = load_matched(&run.dir, 100);
    let ells = art.model.length_scales();
    let n = art.matching.permutation.len();
    let matched: Vec<f64> = (0..n).map(|j| ells[art.matching.permutation[j]]).collect();
    let refs: Vec<f64> = (0..n)
        .map(|j| ml_length_scale(&column(&art.truth, j), art.cfg.sigma_f2, art.cfg.xi))
        .collect();

    let mut sorted = matched.clone();
    sorted.sort_by(f64::total_cmp);
    for pair in sorted.windows(2) {
        assert!(
            pair[1] / pair[0] >= 1.2,
            "pairwise length-scale ratio {:.3} below 1.2 (matched {matched:?})",
            pair[1] / pair[0]
        );
    }

    let order = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
        idx
    };
    assert_eq!(
        order(&matched),
        order(&refs),
        "length-scale ordering {matched:?} does not follow the source smoothness ordering {refs:?}"
    );
}

#[test]
#[ignore = "roughly an hour of training; run with -- --ignored"]
fn full_scale_uncertainty_concentration() {
    let run = full_linear();
    let art = load_matched(&run.dir, 100);
    for j in 0..art.matching.permutation.len() {
        let k = art.matching.permutation[j];
        let mut stds = column(&art.est.std, k);
        let med = median(&mut stds);
        let amplitude = std_dev(&column(&art.truth, j));
        assert!(
            med < 0.05 * amplitude,
            "source {j}: median MC std {med:.4} not below 5% of amplitude {amplitude:.4}"
        );
    }
}

#[test]
#[ignore = "roughly an hour of training; run with -- --ignored"]
fn full_scale_nonlinear_degradation() {
    let linear = full_linear();
    let nonlinear = run_shipped_config("nonlinear_full.cfg", "nonlinear_full");
    assert!(
        nonlinear.mean_corr >= 0.80,
        "nonlinear mean matched correlation {:.4} below 0.80",
        nonlinear.mean_corr
    );
    assert!(
        nonlinear.mean_corr < linear.mean_corr,
        "nonlinear mean {:.4} not below linear mean {:.4}",
        nonlinear.mean_corr,
        linear.mean_corr
    );
}

#[test]
#[ignore = "roughly two hours of training; run with -- --ignored"]
fn full_scale_determinism() {
    let run = full_linear();
    let report = fs::read(run.dir.join("report.csv")).unwrap();
    let checkpoint = fs::read(run.dir.join("checkpoint.bin")).unwrap();
    let out = bin()
        .arg("train")
        .arg("--config")
        .arg(config_path("linear_full.cfg"))
        .arg("--outdir")
        .arg(&run.dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "retrain failed: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report, fs::read(run.dir.join("report.csv")).unwrap(), "report.csv changed between runs");
    assert_eq!(
        checkpoint,
        fs::read(run.dir.join("checkpoint.bin")).unwrap(),
        "checkpoint.bin changed between runs"
    );
}
