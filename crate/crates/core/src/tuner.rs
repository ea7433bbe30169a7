//! Gaussian-process Bayesian optimization of cross-validated held-out
//! log-likelihood.

use std::collections::HashMap;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{CollinError, Result};
use crate::losses::log_likelihood;
use crate::methods::{fit, hyperparameter_space, Hyperparameter, MethodSpec, Prior};
use crate::model::{predict_risk, standardize_fit, Dataset};
use crate::optim::OptimizerConfig;

pub const N_FOLDS: usize = 3;
pub const N_INITIAL: usize = 5;
pub const N_GUIDED: usize = 10;
pub const N_CANDIDATES: usize = 512;
pub const LENGTH_SCALE: f64 = 1.0;
pub const GP_NOISE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// Hyperparameter values in search-space order.
    pub params: Vec<f64>,
    /// Mean held-out log-likelihood (non-finite when the trial failed).
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub param_names: Vec<String>,
    pub best_params: Vec<f64>,
    pub best_value: f64,
    pub best_spec: MethodSpec,
    pub trials: Vec<Trial>,
    pub folds: usize,
}

impl TuneResult {
    pub fn best_params_map(&self) -> Vec<(String, f64)> {
        self.param_names.iter().cloned().zip(self.best_params.iter().copied()).collect()
    }

    pub fn write_trace(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["trial_index".to_string()];
        header.extend(self.param_names.iter().cloned());
        header.push("mean_heldout_loglik".into());
        w.write_record(&header)?;
        for (i, t) in self.trials.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(t.params.iter().map(|v| v.to_string()));
            row.push(t.value.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base as u64) as f64 * inv;
        i /= base as u64;
        inv /= b;
    }
    out
}

/// Halton points `start..start+count` in `[0,1)^p` with a random shift mod 1.
fn shifted_halton(start: u64, count: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    (0..count as u64)
        .map(|i| {
            shift
                .iter()
                .enumerate()
                .map(|(k, s)| (radical_inverse(start + i, PRIMES[k % PRIMES.len()]) + s).fract())
                .collect()
        })
        .collect()
}

/// Maps a unit-cube coordinate to a parameter value, snapping integers.
/// Returns the value and the snapped coordinate.
pub fn decode(hp: &Hyperparameter, u: f64) -> (f64, f64) {
    let u = u.clamp(0.0, 1.0);
    if hp.integer {
        let (lo, hi) = (hp.low, hp.high);
        let v = (lo + u * (hi - lo)).round().clamp(lo, hi);
        let snapped = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        return (v, snapped);
    }
    let v = match hp.prior {
        Prior::Linear => hp.low + u * (hp.high - hp.low),
        Prior::LogLinear => hp.low * (hp.high / hp.low).powf(u),
    };
    (v.clamp(hp.low, hp.high), u)
}

fn kernel(a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * LENGTH_SCALE * LENGTH_SCALE)).exp()
}

struct Gp {
    points: Vec<Vec<f64>>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
}

impl Gp {
    fn fit(points: Vec<Vec<f64>>, y: &[f64]) -> Option<Gp> {
        let n = points.len();
        let mut noise = GP_NOISE;
        while noise < 1.0 {
            let k = DMatrix::from_fn(n, n, |i, j| kernel(&points[i], &points[j]) + if i == j { noise } else { 0.0 });
            if let Some(chol) = Cholesky::new(k) {
                let alpha = chol.solve(&DVector::from_column_slice(y));
                return Some(Gp { points, chol, alpha });
            }
            noise *= 10.0;
        }
        None
    }

    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.points.len(), self.points.iter().map(|p| kernel(p, x)));
        let mean = k.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&k).unwrap_or_else(|| DVector::zeros(k.len()));
        let var = (1.0 - v.norm_squared()).max(0.0);
        (mean, var.sqrt())
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let imp = mean - best;
    if sd < 1e-12 {
        return imp.max(0.0);
    }
    let z = imp / sd;
    imp * normal_cdf(z) + sd * normal_pdf(z)
}

/// Result of a generic Bayesian-optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub trials: Vec<Trial>,
    pub best: usize,
}

/// Maximizes `objective` over `space`: 5 quasi-random trials, then 10
/// expected-improvement trials. Identical snapped parameter vectors are
/// evaluated once and reused.
pub fn tune_objective<F>(space: &[Hyperparameter], seed: u64, mut objective: F) -> Result<SearchOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if space.is_empty() {
        return Ok(SearchOutcome { trials: vec![], best: 0 });
    }
    let p = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..p).map(|_| rng.random()).collect();
    let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let mut trials: Vec<Trial> = Vec::new();
    let mut failures: Vec<String> = Vec::new();

    let mut evaluate = |u: &[f64], coords: &mut Vec<Vec<f64>>, trials: &mut Vec<Trial>| {
        let (params, snapped): (Vec<f64>, Vec<f64>) = space.iter().zip(u).map(|(hp, &x)| decode(hp, x)).unzip();
        let key: Vec<u64> = params.iter().map(|v| v.to_bits()).collect();
        let value = match cache.get(&key) {
            Some(&v) => v,
            None => {
                let v = match objective(&params) {
                    Ok(v) if v.is_finite() => v,
                    Ok(v) => {
                        failures.push(format!("{params:?}: value {v}"));
                        f64::NEG_INFINITY
                    }
                    Err(e) => {
                        failures.push(format!("{params:?}: {e}"));
                        f64::NEG_INFINITY
                    }
                };
                cache.insert(key, v);
                v
            }
        };
        coords.push(snapped);
        trials.push(Trial { params, value });
    };

    for u in shifted_halton(1, N_INITIAL, &shift) {
        evaluate(&u, &mut coords, &mut trials);
    }
    for iter in 0..N_GUIDED {
        let cand_shift: Vec<f64> = (0..p).map(|_| rng.random()).collect();
        let candidates = shifted_halton(1 + (N_INITIAL + iter * N_CANDIDATES) as u64, N_CANDIDATES, &cand_shift);
        let finite: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].value.is_finite()).collect();
        let next = if finite.is_empty() {
            candidates[0].clone()
        } else {
            let ys: Vec<f64> = finite.iter().map(|&i| trials[i].value).collect();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
            let sd = if sd > 0.0 { sd } else { 1.0 };
            let z: Vec<f64> = ys.iter().map(|y| (y - mean) / sd).collect();
            let best = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let pts: Vec<Vec<f64>> = finite.iter().map(|&i| coords[i].clone()).collect();
            match Gp::fit(pts, &z) {
                Some(gp) => {
                    let mut best_c = 0;
                    let mut best_ei = f64::NEG_INFINITY;
                    for (c, u) in candidates.iter().enumerate() {
                        let snapped: Vec<f64> = space.iter().zip(u).map(|(hp, &x)| decode(hp, x).1).collect();
                        let (m, s) = gp.predict(&snapped);
                        let ei = expected_improvement(m, s, best);
                        if ei > best_ei {
                            best_ei = ei;
                            best_c = c;
                        }
                    }
                    candidates[best_c].clone()
                }
                None => candidates[0].clone(),
            }
        };
        evaluate(&next, &mut coords, &mut trials);
    }
    let best = (0..trials.len())
        .filter(|&i| trials[i].value.is_finite())
        .fold(None, |acc: Option<usize>, i| match acc {
            Some(b) if trials[b].value >= trials[i].value => Some(b),
            _ => Some(i),
        });
    match best {
        Some(best) => Ok(SearchOutcome { trials, best }),
        None => Err(CollinError::AllTrialsFailed(failures.join("; "))),
    }
}

/// Row indices of each fold after a seeded shuffle.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || n < folds {
        return Err(CollinError::InvalidInput(format!("cannot split {n} rows into {folds} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::with_capacity(n / folds + 1); folds];
    for (pos, &i) in idx.iter().enumerate() {
        out[pos % folds].push(i);
    }
    Ok(out)
}

/// Training rows (complement of fold `f`).
pub fn training_rows(folds: &[Vec<usize>], f: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, r)| r.iter().copied()).collect();
    rows.sort_unstable();
    rows
}

/// Mean over folds of the summed held-out log-likelihood. Standardization
/// is refit inside every training split.
pub fn cv_loglik(spec: &MethodSpec, data: &Dataset, folds: usize, seed: u64, config: &OptimizerConfig) -> Result<f64> {
    let parts = fold_partition(data.n(), folds, seed)?;
    let mut total = 0.0;
    let mut used = 0;
    for f in 0..folds {
        let train = data.select_rows(&training_rows(&parts, f));
        let test = data.select_rows(&parts[f]);
        if !train.has_both_classes() || !test.has_both_classes() {
            warn!("fold {f} skipped: single-class outcome");
            continue;
        }
        let params = standardize_fit(train.x(), Some(train.feature_names()))?;
        let model = fit(spec, &params.apply_dataset(&train)?, config)?;
        let p = predict_risk(&model, &params.apply(test.x())?)?;
        total += log_likelihood(&p, test.y());
        used += 1;
    }
    if used == 0 {
        return Err(CollinError::SingleClass { context: "every cross-validation fold".into() });
    }
    Ok(total / used as f64)
}

/// Tunes the hyperparameters of `spec.method` on `data` with the default
/// optimizer settings.
pub fn tune(spec: &MethodSpec, data: &Dataset, seed: u64) -> Result<TuneResult> {
    tune_with(spec, data, seed, &OptimizerConfig::default().with_seed(seed))
}

pub fn tune_with(spec: &MethodSpec, data: &Dataset, seed: u64, config: &OptimizerConfig) -> Result<TuneResult> {
    let d = data.d();
    let space = hyperparameter_space(spec.method, d);
    let param_names: Vec<String> = space.iter().map(|h| h.name.to_string()).collect();
    let make = |values: &[f64]| -> Result<MethodSpec> {
        let mut s = *spec;
        for (hp, &v) in space.iter().zip(values) {
            s.set(hp.name, v)?;
        }
        s.validate(d)?;
        Ok(s)
    };
    if space.is_empty() {
        return Ok(TuneResult {
            param_names,
            best_params: vec![],
            best_value: f64::NAN,
            best_spec: *spec,
            trials: vec![],
            folds: N_FOLDS,
        });
    }
    let outcome = tune_objective(&space, seed, |values| cv_loglik(&make(values)?, data, N_FOLDS, seed, config))?;
    let best = &outcome.trials[outcome.best];
    Ok(TuneResult {
        param_names,
        best_params: best.params.clone(),
        best_value: best.value,
        best_spec: make(&best.params)?,
        trials: outcome.trials,
        folds: N_FOLDS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::Method;
    use crate::model::sigmoid;
    use nalgebra::DMatrix;
    use rand_distr::{Distribution, StandardNormal};

    fn data(n: usize, beta: &[f64], seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = beta.len();
        let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |i, _| {
            let z: f64 = (0..d).map(|j| x[(i, j)] * beta[j]).sum();
            (rng.random::<f64>() < sigmoid(z)) as u8 as f64
        });
        Dataset::unnamed(x, y).unwrap()
    }

    #[test]
    fn empty_space_returns_immediately() {
        let ds = data(60, &[0.5, 0.5], 1);
        let r = tune(&MethodSpec::lr(), &ds, 1).unwrap();
        assert!(r.trials.is_empty() && r.best_params.is_empty());
        assert_eq!(r.best_spec, MethodSpec::lr());
    }

    #[test]
    fn one_dimensional_search_beats_grid_decile() {
        let space = hyperparameter_space(Method::Lasso, 5);
        let f = |c: f64| -(c.log10() - 0.7).powi(2);
        let out = tune_objective(&space, 11, |v| Ok(f(v[0]))).unwrap();
        assert_eq!(out.trials.len(), N_INITIAL + N_GUIDED);
        let mut grid: Vec<f64> = (0..1000).map(|i| f(1e-3 * (1e5f64).powf(i as f64 / 999.0))).collect();
        grid.sort_by(f64::total_cmp);
        assert!(out.trials[out.best].value >= grid[900]);
    }

    #[test]
    fn search_is_deterministic_and_in_range() {
        let space = hyperparameter_space(Method::Laelr, 7);
        let f = |v: &[f64]| Ok(-(v[0] - 5.0).powi(2) - (v[1].ln() - 1.0).powi(2));
        let a = tune_objective(&space, 3, f).unwrap();
        let b = tune_objective(&space, 3, f).unwrap();
        assert_eq!(a, b);
        for t in &a.trials {
            assert!(t.params[0].fract() == 0.0 && (4.0..=7.0).contains(&t.params[0]));
            assert!((1e-3..=1e2).contains(&t.params[1]));
        }
        let best = a.trials.iter().map(|t| t.value).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.trials[a.best].value, best);
        assert_ne!(tune_objective(&space, 4, f).unwrap(), a);
    }

    #[test]
    fn all_failed_trials_error() {
        let space = hyperparameter_space(Method::Ridge, 3);
        let err = tune_objective(&space, 1, |_| Ok(f64::NAN)).unwrap_err();
        assert!(matches!(err, CollinError::AllTrialsFailed(_)));
    }

    #[test]
    fn decode_maps_priors() {
        let space = hyperparameter_space(Method::ElasticNet, 3);
        assert_eq!(decode(&space[0], 0.0).0, 1e-3);
        assert!((decode(&space[0], 0.6).0 - 1.0).abs() < 1e-12);
        let k = hyperparameter_space(Method::Pclr, 7)[0];
        assert_eq!(decode(&k, 0.5), (6.0, 2.0 / 3.0));
        assert_eq!(decode(&k, 1.0).0, 7.0);
    }

    #[test]
    fn folds_partition_rows() {
        let parts = fold_partition(100, 3, 5).unwrap();
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(parts.iter().all(|p| p.len() >= 33));
        assert!(fold_partition(2, 3, 0).is_err());
    }

    #[test]
    fn cv_loglik_entropy_bound_and_additivity() {
        let ds = data(900, &[0.0, 0.0], 2);
        let cfg = OptimizerConfig::default();
        let v = cv_loglik(&MethodSpec::lr(), &ds, 3, 7, &cfg).unwrap();
        let ybar = ds.prevalence();
        let h = -(ybar * ybar.ln() + (1.0 - ybar) * (1.0 - ybar).ln());
        let bound = -300.0 * h;
        assert!(v <= bound + 3.0 && v > bound - 6.0, "{v} vs {bound}");

        let rows: Vec<usize> = (0..900).chain(0..900).collect();
        let doubled = ds.select_rows(&rows);
        let v2 = cv_loglik(&MethodSpec::lr(), &doubled, 3, 7, &cfg).unwrap();
        assert!((v2 / v - 2.0).abs() < 0.05, "{}", v2 / v);
    }

    #[test]
    fn cv_loglik_single_class_everywhere_errors() {
        let x = DMatrix::from_fn(30, 1, |i, _| i as f64);
        let ds = Dataset::unnamed(x, DVector::zeros(30)).unwrap();
        assert!(cv_loglik(&MethodSpec::lr(), &ds, 3, 1, &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn ridge_tuning_avoids_max_regularization_on_strong_signal() {
        let ds = data(300, &[1.5, -1.0, 0.8], 4);
        let r = tune(&MethodSpec::ridge(1.0), &ds, 9).unwrap();
        assert_eq!(r.trials.len(), 15);
        assert!(r.best_params[0] > 1e-3 * 1.5, "{:?}", r.best_params);
        let best = r.trials.iter().map(|t| t.value).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best_value, best);
        assert_eq!(r.best_spec.penalty.c_l2, r.best_params[0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        r.write_trace(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("trial_index,c_l2,mean_heldout_loglik\n"));
        assert_eq!(text.lines().count(), 16);
    }
}
