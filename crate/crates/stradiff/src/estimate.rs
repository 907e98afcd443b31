//! Post-training Monte Carlo source estimation, permutation/sign matching
//! against ground truth, and plug-in mixture reconstruction.

use crate::mixing::MixingMap;
use crate::model::{Model, NormStats};
use crate::tape::ParamStore;
use crate::tensor::{Shape, Tensor};
use rand_chacha::ChaCha20Rng;

/// Pearson correlation; returns 0 when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Monte Carlo source estimate over R draws.
#[derive(Clone, Debug)]
pub struct SourceEstimate {
    pub mean: Tensor,
    pub std: Tensor,
    pub r: usize,
    pub band_lo: Tensor,
    pub band_hi: Tensor,
}

/// Entrywise mean and (R−1)-denominator standard deviation of the draws,
/// with 95% bands at mean ∓ 1.96·std.
pub fn reduce_draws(draws: &[Tensor]) -> SourceEstimate {
    let r = draws.len();
    assert!(r >= 2, "need at least two Monte Carlo draws");
    let shape = draws[0].shape;
    let mut mean = Tensor::zeros(shape);
    for d in draws {
        assert_eq!(d.shape, shape);
        for (m, v) in mean.data.iter_mut().zip(d.data.iter()) {
            *m += v;
        }
    }
    for m in mean.data.iter_mut() {
        *m /= r as f64;
    }
    let mut std = Tensor::zeros(shape);
    for d in draws {
        for (s, (v, m)) in std.data.iter_mut().zip(d.data.iter().zip(mean.data.iter())) {
            *s += (v - m) * (v - m);
        }
    }
    let mut band_lo = mean.clone();
    let mut band_hi = mean.clone();
    for i in 0..std.data.len() {
        std.data[i] = (std.data[i] / (r - 1) as f64).sqrt();
        band_lo.data[i] -= 1.96 * std.data[i];
        band_hi.data[i] += 1.96 * std.data[i];
    }
    SourceEstimate { mean, std, r, band_lo, band_hi }
}

/// Draws R source samples from the learned start distributions (branch order
/// within each draw) and reduces them.
pub fn mc_estimate(model: &Model, r: usize, rng: &mut ChaCha20Rng) -> SourceEstimate {
    assert!(r >= 2, "need at least two Monte Carlo draws");
    let draws: Vec<Tensor> = (0..r).map(|_| model.sample_sources_raw(rng)).collect();
    reduce_draws(&draws)
}

/// Permutation/sign assignment of estimated columns to truth columns.
#[derive(Clone, Debug)]
pub struct MatchResult {
    /// `permutation[j]` is the estimate column assigned to truth column j.
    pub permutation: Vec<usize>,
    /// Sign (+1/−1) applied to the assigned estimate column.
    pub signs: Vec<f64>,
    /// Matched absolute Pearson correlations, one per truth column.
    pub correlations: Vec<f64>,
    pub mean_corr: f64,
    /// True where a zero-variance column forced the correlation to 0.
    pub zero_variance: Vec<bool>,
}

fn lexicographic_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut perms = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        perms.push(cur.clone());
        // Standard next-permutation step; stop after the last (descending) one.
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| cur[j] > cur[i]).unwrap();
        cur.swap(i, j);
        cur[i + 1..].reverse();
    }
    perms
}

/// Scores every permutation of estimate columns against the truth columns,
/// choosing signs per pair from the sign of the Pearson correlation, and
/// returns the assignment with the highest mean absolute correlation.
/// Ties keep the lexicographically smallest permutation.
pub fn match_sources(est: &Tensor, truth: &Tensor) -> MatchResult {
    let (t_len, n) = match (est.shape, truth.shape) {
        (Shape::Matrix(t1, n1), Shape::Matrix(t2, n2)) => {
            assert_eq!((t1, n1), (t2, n2), "estimate/truth shape mismatch");
            (t1, n1)
        }
        _ => panic!("match_sources expects T×n matrices"),
    };
    assert!(n <= 8, "factorial matching is limited to 8 sources");
    let _ = t_len;

    let mut corr = vec![vec![0.0; n]; n];
    for i in 0..n {
        let ei = est.col(i);
        for j in 0..n {
            corr[i][j] = pearson(&ei.data, &truth.col(j).data);
        }
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in lexicographic_permutations(n) {
        let score = (0..n).map(|j| corr[perm[j]][j].abs()).sum::<f64>() / n as f64;
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, perm));
        }
    }
    let (mean_corr, permutation) = best.unwrap();
    let signs: Vec<f64> =
        (0..n).map(|j| if corr[permutation[j]][j] < 0.0 { -1.0 } else { 1.0 }).collect();
    let correlations: Vec<f64> = (0..n).map(|j| corr[permutation[j]][j].abs()).collect();
    let zero_variance: Vec<bool> = (0..n)
        .map(|j| {
            let e = est.col(permutation[j]);
            let t = truth.col(j);
            column_variance(&e) == 0.0 || column_variance(&t) == 0.0
        })
        .collect();
    MatchResult { permutation, signs, correlations, mean_corr, zero_variance }
}

fn column_variance(v: &Tensor) -> f64 {
    let n = v.len() as f64;
    let m = v.data.iter().sum::<f64>() / n;
    v.data.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Learned mixing applied to the Monte Carlo mean, then the per-channel
/// standardization undone: the reconstruction in original data units.
pub fn plug_in_reconstruction(model: &Model, mean_sources: &Tensor) -> Tensor {
    let norm = model.norm.as_ref().expect("model has no stored normalization statistics");
    plug_in(&model.mixing, &model.store, norm, mean_sources)
}

fn plug_in(mixing: &MixingMap, store: &ParamStore, norm: &NormStats, mean_sources: &Tensor) -> Tensor {
    let yhat_norm = mixing.mix_raw(store, mean_sources);
    norm.invert(&yhat_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::MixingKind;
    use crate::gp::GpConfig;
    use crate::latent::LOG_SIGMA_MIN;
    use crate::mixing::LinearMixing;
    use crate::model::ModelConfig;
    use crate::rng::{rng_for, standard_normal_vec, STREAM_MC};

    fn toy_model() -> Model {
        Model::init(
            ModelConfig {
                t_len: 16,
                n: 2,
                m: 2,
                mixing_kind: MixingKind::Linear,
                hidden: 8,
                l: 4,
                beta_min: 0.02,
                beta_max: 0.2,
                gp: GpConfig::default(),
            },
            21,
        )
        .unwrap()
    }

    #[test]
    fn pearson_reference_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        assert!((pearson(&x, &y) - 1.0).abs() < 1e-12);
        let z: Vec<f64> = x.iter().map(|v| -0.5 * v).collect();
        assert!((pearson(&x, &z) + 1.0).abs() < 1e-12);
        let c = [2.0, 2.0, 2.0, 2.0];
        assert_eq!(pearson(&x, &c), 0.0);
    }

    #[test]
    fn pearson_is_scale_and_shift_invariant() {
        let mut rng = rng_for(101, 9);
        let x = standard_normal_vec(&mut rng, 40);
        let y = standard_normal_vec(&mut rng, 40);
        let base = pearson(&x, &y);
        let y2: Vec<f64> = y.iter().map(|v| 7.0 * v + 3.0).collect();
        assert!((pearson(&x, &y2) - base).abs() < 1e-12);
    }

    #[test]
    fn identical_draws_have_zero_std() {
        let d = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
        let est = reduce_draws(&[d.clone(), d.clone()]);
        assert_eq!(est.mean.data, d.data);
        assert!(est.std.data.iter().all(|v| *v == 0.0));
        assert_eq!(est.band_lo.data, d.data);
        assert_eq!(est.band_hi.data, d.data);
    }

    #[test]
    fn bands_bracket_the_mean() {
        let mut rng = rng_for(102, 9);
        let draws: Vec<Tensor> =
            (0..20).map(|_| Tensor::matrix(5, 2, standard_normal_vec(&mut rng, 10))).collect();
        let est = reduce_draws(&draws);
        for i in 0..est.mean.len() {
            assert!(est.band_lo.data[i] <= est.mean.data[i]);
            assert!(est.band_hi.data[i] >= est.mean.data[i]);
            assert!((est.band_hi.data[i] - est.mean.data[i] - 1.96 * est.std.data[i]).abs() < 1e-12);
            assert!(est.std.data[i] >= 0.0);
        }
    }

    #[test]
    fn clamped_start_noise_gives_nearly_deterministic_estimates() {
        // With log σ pushed to the clamp floor, start noise is e^−10: the MC
        // std collapses and the mean is the deterministic chain output.
        let mut model = toy_model();
        for k in 0..2 {
            let pid = model.branches[k].log_sigma;
            for v in model.store.get_mut(pid).data.iter_mut() {
                *v = LOG_SIGMA_MIN - 5.0;
            }
        }
        let mut rng = rng_for(21, STREAM_MC);
        let est = mc_estimate(&model, 50, &mut rng);
        // Deterministic reference: zero start noise means z = mu.
        let zero_rng_sources = {
            let cols: Vec<Tensor> = model
                .branches
                .iter()
                .map(|br| {
                    let z = model.store.get(br.mu).clone();
                    crate::diffusion::reverse_sample_raw(
                        &model.store,
                        &br.net,
                        &model.schedule,
                        &z,
                        crate::diffusion::EPS_NUM,
                    )
                })
                .collect();
            Tensor::from_cols(&cols)
        };
        for i in 0..est.mean.len() {
            assert!(est.std.data[i] < 1e-3, "std {}", est.std.data[i]);
            assert!((est.mean.data[i] - zero_rng_sources.data[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn mc_mean_is_self_consistent_across_sample_sizes() {
        let model = toy_model();
        let mut rng = rng_for(22, STREAM_MC);
        let reference = mc_estimate(&model, 100_000, &mut rng);
        let mut rng2 = rng_for(23, STREAM_MC);
        let small = mc_estimate(&model, 1000, &mut rng2);
        for i in 0..small.mean.len() {
            let tol = 4.0 * reference.std.data[i] / (1000.0f64).sqrt();
            assert!(
                (small.mean.data[i] - reference.mean.data[i]).abs() < tol.max(1e-9),
                "entry {i}: {} vs {} (tol {tol})",
                small.mean.data[i],
                reference.mean.data[i]
            );
        }
    }

    #[test]
    fn matching_identity_case() {
        let mut rng = rng_for(103, 9);
        let truth = Tensor::matrix(30, 3, standard_normal_vec(&mut rng, 90));
        let m = match_sources(&truth, &truth);
        assert_eq!(m.permutation, vec![0, 1, 2]);
        assert_eq!(m.signs, vec![1.0, 1.0, 1.0]);
        for c in &m.correlations {
            assert!((c - 1.0).abs() < 1e-12);
        }
        assert!((m.mean_corr - 1.0).abs() < 1e-12);
        assert!(m.zero_variance.iter().all(|f| !f));
    }

    #[test]
    fn matching_recovers_swap_and_sign() {
        let mut rng = rng_for(104, 9);
        let truth = Tensor::matrix(40, 3, standard_normal_vec(&mut rng, 120));
        // est columns: [truth_1, -truth_2, truth_0] (swap all, negate one).
        let est = Tensor::from_cols(&[
            truth.col(1),
            {
                let mut c = truth.col(2);
                for v in c.data.iter_mut() {
                    *v = -*v;
                }
                c
            },
            truth.col(0),
        ]);
        let m = match_sources(&est, &truth);
        assert_eq!(m.permutation, vec![2, 0, 1]);
        assert_eq!(m.signs, vec![1.0, 1.0, -1.0]);
        for c in &m.correlations {
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_agrees_with_exhaustive_signed_oracle() {
        // Independent oracle: scores all n!·2ⁿ signed column assignments by
        // mean signed correlation and reports the best.
        let mut rng = rng_for(105, 9);
        for _ in 0..20 {
            let est = Tensor::matrix(25, 3, standard_normal_vec(&mut rng, 75));
            let truth = Tensor::matrix(25, 3, standard_normal_vec(&mut rng, 75));
            let got = match_sources(&est, &truth);

            let mut best = f64::NEG_INFINITY;
            for perm in lexicographic_permutations(3) {
                for mask in 0..8u32 {
                    let mut score = 0.0;
                    for j in 0..3 {
                        let sign = if mask & (1 << j) != 0 { -1.0 } else { 1.0 };
                        let mut e = est.col(perm[j]);
                        for v in e.data.iter_mut() {
                            *v *= sign;
                        }
                        score += pearson(&e.data, &truth.col(j).data);
                    }
                    best = best.max(score / 3.0);
                }
            }
            assert!((got.mean_corr - best).abs() < 1e-12, "{} vs oracle {best}", got.mean_corr);
        }
    }

    #[test]
    fn zero_variance_column_is_flagged_not_crashing() {
        let mut rng = rng_for(106, 9);
        let truth = Tensor::matrix(20, 2, standard_normal_vec(&mut rng, 40));
        let est = Tensor::from_cols(&[Tensor::vector(vec![1.0; 20]), truth.col(1)]);
        let m = match_sources(&est, &truth);
        assert!(m.zero_variance.iter().any(|f| *f));
        assert!(m.correlations.iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn plug_in_with_identity_map_and_unit_stats_returns_mean() {
        let mut store = ParamStore::new();
        let a = store.add("mixing.a", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let mixing = MixingMap::Linear(LinearMixing { a, m: 2, n: 2 });
        let norm = NormStats { mean: vec![0.0, 0.0], std: vec![1.0, 1.0] };
        let mut rng = rng_for(107, 9);
        let mean_sources = Tensor::matrix(6, 2, standard_normal_vec(&mut rng, 12));
        let y = plug_in(&mixing, &store, &norm, &mean_sources);
        assert_eq!(y.data, mean_sources.data);
    }

    #[test]
    fn plug_in_undoes_standardization() {
        let mut store = ParamStore::new();
        let a = store.add("mixing.a", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let mixing = MixingMap::Linear(LinearMixing { a, m: 2, n: 2 });
        let norm = NormStats { mean: vec![5.0, -1.0], std: vec![2.0, 0.5] };
        let mean_sources = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let y = plug_in(&mixing, &store, &norm, &mean_sources);
        assert_eq!(y.data, vec![7.0, 0.0, 11.0, 1.0]);
    }
}
