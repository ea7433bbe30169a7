//! Replicated simulation studies and repeated k-fold evaluation.
//!
//! Every replication owns a seed derived from the base seed, so results do
//! not depend on how the worker pool schedules them.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::{build_population, sample, setting_spec, GaussianPopulation, SettingName};
use crate::error::{CollinError, Result};
use crate::methods::{fit, MethodSpec};
use crate::metrics::{evaluate, exjacc, percentile_ci, MetricsReport, SIGN_THRESHOLD};
use crate::model::{standardize_fit, Dataset, LinearModel};
use crate::optim::OptimizerConfig;
use crate::tuner::{tune_with, TuneResult};

pub const DEFAULT_REPS: usize = 100;
pub const DEFAULT_VALIDATION: usize = 10_000;
pub const MAX_FAILURE_RATE: f64 = 0.10;
pub const WORKERS_ENV: &str = "COLLIN_WORKERS";

/// SplitMix64 finalizer; a bijection on `u64`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep`.
pub fn replication_seed(base_seed: u64, rep: usize) -> u64 {
    base_seed ^ splitmix64(rep as u64)
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0xA5A5)))
}

#[derive(Debug, Clone)]
pub enum Setting {
    Named(SettingName),
    Custom { label: String, population: GaussianPopulation, n_dev: usize },
}

impl Setting {
    pub fn label(&self) -> String {
        match self {
            Setting::Named(n) => n.ident().to_string(),
            Setting::Custom { label, .. } => label.clone(),
        }
    }

    fn resolve(&self) -> Result<(GaussianPopulation, usize)> {
        match self {
            Setting::Named(n) => Ok((build_population(*n)?, setting_spec(*n).n_dev)),
            Setting::Custom { population, n_dev, .. } => Ok((population.clone(), *n_dev)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub setting: Setting,
    /// Templates; hyperparameters are re-tuned per replication when `tune` is set.
    pub methods: Vec<MethodSpec>,
    pub n_reps: usize,
    pub n_validation: usize,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub tune: bool,
    pub optimizer: OptimizerConfig,
}

impl RunConfig {
    pub fn new(setting: SettingName, methods: Vec<MethodSpec>) -> Self {
        RunConfig {
            setting: Setting::Named(setting),
            methods,
            n_reps: DEFAULT_REPS,
            n_validation: DEFAULT_VALIDATION,
            base_seed: 0,
            output_dir: None,
            tune: true,
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(CollinError::InvalidInput("at least one method is required".into()));
        }
        if self.n_reps < 2 {
            return Err(CollinError::InvalidInput("n_reps must be >= 2 (ExJacc needs two fits)".into()));
        }
        if self.n_validation < 10 {
            return Err(CollinError::InvalidInput("n_validation must be >= 10".into()));
        }
        self.optimizer.validate()
    }
}

/// One fitted model and its validation metrics.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub rep: usize,
    pub method: String,
    pub metrics: MetricsReport,
    pub model: LinearModel,
    pub tuning: Option<TuneResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub rep: usize,
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

impl Interval {
    fn of(values: &[f64]) -> Option<Interval> {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let (low, high) = if v.len() >= 2 { percentile_ci(&v, 0.95).ok()? } else { (v[0], v[0]) };
        Some(Interval { mean, low, high })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub auroc: Option<Interval>,
    pub citl: Option<Interval>,
    pub cslope: Option<Interval>,
    pub r2: Option<Interval>,
    pub coef_mse: Option<Interval>,
    pub exjacc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub label: String,
    pub records: Vec<RepRecord>,
    pub failures: Vec<Failure>,
    pub summaries: Vec<MethodSummary>,
}

impl SimulationReport {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn models(&self, method: &str) -> Vec<&LinearModel> {
        self.records.iter().filter(|r| r.method == method).map(|r| &r.model).collect()
    }
}

/// Sum and share of dose coefficients below −0.01 and above 0.01:
/// `(sum_neg, sum_pos, prop_neg, prop_pos)`. Proportions are NaN without
/// dose predictors.
pub fn dose_summary(dose_coefficients: &[f64]) -> (f64, f64, f64, f64) {
    let neg: Vec<f64> = dose_coefficients.iter().copied().filter(|&b| b < -SIGN_THRESHOLD).collect();
    let pos: Vec<f64> = dose_coefficients.iter().copied().filter(|&b| b > SIGN_THRESHOLD).collect();
    let n = dose_coefficients.len() as f64;
    (neg.iter().sum(), pos.iter().sum(), neg.len() as f64 / n, pos.len() as f64 / n)
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CollinError::InvalidInput(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CollinError::InvalidInput(format!("cannot start worker pool: {e}")))
}

/// Tunes (optionally) and fits one method on raw `train`, then evaluates it
/// on raw `test` through the training standardization.
fn develop_and_evaluate(
    template: &MethodSpec,
    train: &Dataset,
    test: &Dataset,
    truth: Option<&LinearModel>,
    tune: bool,
    seed: u64,
    optimizer: &OptimizerConfig,
) -> Result<(LinearModel, MetricsReport, Option<TuneResult>)> {
    let params = standardize_fit(train.x(), Some(train.feature_names()))?;
    let z = params.apply_dataset(train)?;
    let config = optimizer.with_seed(seed);
    let tuning = if tune { Some(tune_with(template, &z, seed, &config)?) } else { None };
    let spec = tuning.as_ref().map_or(*template, |t| t.best_spec);
    let model = fit(&spec, &z, &config)?;
    let metrics = evaluate(&model, &params.apply_dataset(test)?, truth)?;
    Ok((model, metrics, tuning))
}

fn summarize(methods: &[MethodSpec], records: &[RepRecord], failures: &[Failure], attempts: usize) -> Result<Vec<MethodSummary>> {
    let mut out = Vec::new();
    for spec in methods {
        let name = spec.method.name();
        let rs: Vec<&RepRecord> = records.iter().filter(|r| r.method == name).collect();
        let n_failed = failures.iter().filter(|f| f.method == name).count();
        if n_failed as f64 > MAX_FAILURE_RATE * attempts as f64 {
            let first = failures.iter().find(|f| f.method == name).map(|f| f.message.clone()).unwrap_or_default();
            return Err(CollinError::TooManyFailures { failed: n_failed, total: attempts, first: format!("{name}: {first}") });
        }
        let col = |f: fn(&MetricsReport) -> Option<f64>| -> Vec<f64> { rs.iter().filter_map(|r| f(&r.metrics)).collect() };
        let models: Vec<LinearModel> = rs.iter().map(|r| r.model.clone()).collect();
        out.push(MethodSummary {
            method: name.to_string(),
            n_ok: rs.len(),
            n_failed,
            auroc: Interval::of(&col(|m| Some(m.auroc))),
            citl: Interval::of(&col(|m| Some(m.citl))),
            cslope: Interval::of(&col(|m| Some(m.cslope))),
            r2: Interval::of(&col(|m| Some(m.r2_nagelkerke))),
            coef_mse: Interval::of(&col(|m| m.coef_mse)),
            exjacc: if models.len() >= 2 { Some(exjacc(&models)?) } else { None },
        });
    }
    Ok(out)
}

type Outcome = std::result::Result<(LinearModel, MetricsReport, Option<TuneResult>), String>;

fn collect(methods: &[MethodSpec], outcomes: Vec<(usize, Vec<Outcome>)>) -> (Vec<RepRecord>, Vec<Failure>) {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, per_method) in outcomes {
        for (spec, outcome) in methods.iter().zip(per_method) {
            let method = spec.method.name().to_string();
            match outcome {
                Ok((model, metrics, tuning)) => records.push(RepRecord { rep, method, metrics, model, tuning }),
                Err(message) => {
                    warn!("replication {rep}, {method}: {message}");
                    failures.push(Failure { rep, method, message });
                }
            }
        }
    }
    (records, failures)
}

/// Runs the simulation study described by `config` and, when an output
/// directory is set, writes the report there.
pub fn run_setting(config: &RunConfig) -> Result<SimulationReport> {
    config.validate()?;
    let (population, n_dev) = config.setting.resolve()?;
    let label = config.setting.label();
    info!("{label}: d = {}, {} replications, {} methods", population.d(), config.n_reps, config.methods.len());
    let pool = worker_pool()?;
    let outcomes: Vec<(usize, Vec<Outcome>)> = pool.install(|| {
        (0..config.n_reps)
            .into_par_iter()
            .map(|rep| {
                let seed = replication_seed(config.base_seed, rep);
                let data = sample(&population, n_dev, sub_seed(seed, 0))
                    .and_then(|dev| Ok((dev, sample(&population, config.n_validation, sub_seed(seed, 1))?)));
                let per_method = config
                    .methods
                    .iter()
                    .enumerate()
                    .map(|(m, spec)| {
                        let (dev, val) = data.as_ref().map_err(|e| e.to_string())?;
                        develop_and_evaluate(
                            spec,
                            dev,
                            val,
                            Some(&population.ground_truth),
                            config.tune,
                            sub_seed(seed, 16 + m as u64),
                            &config.optimizer,
                        )
                        .map_err(|e| e.to_string())
                    })
                    .collect();
                (rep, per_method)
            })
            .collect()
    });
    let (records, failures) = collect(&config.methods, outcomes);
    let summaries = summarize(&config.methods, &records, &failures, config.n_reps)?;
    let report = SimulationReport { label, records, failures, summaries };
    if let Some(dir) = &config.output_dir {
        emit_report(&report, dir)?;
    }
    Ok(report)
}

/// Seeded k-fold partition in which every training split and every held-out
/// fold contains both classes. Reshuffles up to 100 times.
pub fn kfold_partition(y: &[f64], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = y.len();
    if k < 2 || n < k {
        return Err(CollinError::InvalidInput(format!("cannot split {n} rows into {k} folds")));
    }
    let both = |rows: &mut dyn Iterator<Item = usize>| {
        let (mut pos, mut neg) = (false, false);
        for i in rows {
            if y[i] == 1.0 {
                pos = true
            } else {
                neg = true
            }
        }
        pos && neg
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let folds: Vec<Vec<usize>> = (0..k).map(|f| idx.iter().skip(f).step_by(k).copied().collect()).collect();
        let ok = (0..k).all(|f| {
            both(&mut folds[f].iter().copied())
                && both(&mut folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, r)| r.iter().copied()))
        });
        if ok {
            return Ok(folds);
        }
    }
    Err(CollinError::SingleClass { context: format!("a {k}-fold split after 100 reshuffles") })
}

/// Repeated k-fold cross-validation on observed data. Records are indexed
/// by `repeat * k + fold`.
pub fn run_repeated_kfold(
    data: &Dataset,
    methods: &[MethodSpec],
    k: usize,
    n_reps: usize,
    base_seed: u64,
    tune: bool,
    optimizer: &OptimizerConfig,
) -> Result<SimulationReport> {
    if methods.is_empty() || n_reps == 0 {
        return Err(CollinError::InvalidInput("need at least one method and one repeat".into()));
    }
    let partitions: Vec<Vec<Vec<usize>>> = (0..n_reps)
        .map(|r| kfold_partition(data.y().as_slice(), k, replication_seed(base_seed, r)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..n_reps).flat_map(|r| (0..k).map(move |f| (r, f))).collect();
    let pool = worker_pool()?;
    let outcomes: Vec<(usize, Vec<Outcome>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(r, f)| {
                let folds = &partitions[r];
                let mut train_rows: Vec<usize> =
                    folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, rows)| rows.iter().copied()).collect();
                train_rows.sort_unstable();
                let train = data.select_rows(&train_rows);
                let test = data.select_rows(&folds[f]);
                let seed = sub_seed(replication_seed(base_seed, r), 1000 + f as u64);
                let per_method = methods
                    .iter()
                    .enumerate()
                    .map(|(m, spec)| {
                        develop_and_evaluate(spec, &train, &test, None, tune, sub_seed(seed, 16 + m as u64), optimizer)
                            .map_err(|e| e.to_string())
                    })
                    .collect();
                (r * k + f, per_method)
            })
            .collect()
    });
    let (records, failures) = collect(methods, outcomes);
    let summaries = summarize(methods, &records, &failures, jobs.len())?;
    Ok(SimulationReport { label: format!("{k}-fold x {n_reps}"), records, failures, summaries })
}

fn fmt(v: f64) -> String {
    if v.is_finite() { format!("{v}") } else { String::new() }
}

fn method_order(report: &SimulationReport) -> Vec<String> {
    let mut names: Vec<String> = report.summaries.iter().map(|s| s.method.clone()).collect();
    if names.is_empty() {
        names = report.records.iter().map(|r| r.method.clone()).collect();
        names.dedup();
    }
    names
}

/// Writes `raw_metrics.csv`, `summary.json`, `coefficients.csv`,
/// `calibration_<method>.csv`, `tuning_traces.csv` and (if any)
/// `failures.csv` into `dir`.
pub fn emit_report(report: &SimulationReport, dir: &Path) -> Result<()> {
    if report.records.is_empty() && report.failures.is_empty() {
        return Err(CollinError::InvalidInput("nothing to report".into()));
    }
    fs::create_dir_all(dir)?;

    let mut raw = csv::Writer::from_path(dir.join("raw_metrics.csv"))?;
    raw.write_record(["rep", "method", "auroc", "citl", "cslope", "r2", "coef_mse"])?;
    for r in &report.records {
        let m = &r.metrics;
        raw.write_record([
            r.rep.to_string(),
            r.method.clone(),
            fmt(m.auroc),
            fmt(m.citl),
            fmt(m.cslope),
            fmt(m.r2_nagelkerke),
            m.coef_mse.map(fmt).unwrap_or_default(),
        ])?;
    }
    raw.flush()?;

    #[derive(Serialize)]
    struct Summary<'a> {
        setting: &'a str,
        methods: &'a [MethodSummary],
        failures: &'a [Failure],
    }
    let summary = Summary { setting: &report.label, methods: &report.summaries, failures: &report.failures };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;

    if !report.failures.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("failures.csv"))?;
        for f in &report.failures {
            w.serialize(f)?;
        }
        w.flush()?;
    }

    write_coefficients(report, &dir.join("coefficients.csv"))?;

    for method in method_order(report) {
        let mut w = csv::Writer::from_path(dir.join(format!("calibration_{method}.csv")))?;
        w.write_record(["rep", "predicted", "observed"])?;
        for r in report.records.iter().filter(|r| r.method == method) {
            for (p, o) in &r.metrics.calibration_curve {
                w.write_record([r.rep.to_string(), fmt(*p), fmt(*o)])?;
            }
        }
        w.flush()?;
    }

    let mut w = csv::Writer::from_path(dir.join("tuning_traces.csv"))?;
    w.write_record(["rep", "method", "trial_index", "param", "value", "mean_heldout_loglik"])?;
    for r in &report.records {
        let Some(t) = &r.tuning else { continue };
        for (i, trial) in t.trials.iter().enumerate() {
            for (name, v) in t.param_names.iter().zip(&trial.params) {
                w.write_record([r.rep.to_string(), r.method.clone(), i.to_string(), name.clone(), fmt(*v), fmt(trial.value)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean and 95% percentile interval of every coefficient per method, with
/// the dose-coefficient summaries as trailing columns.
fn write_coefficients(report: &SimulationReport, path: &Path) -> Result<()> {
    let Some(first) = report.records.first() else {
        return Ok(());
    };
    let names = &first.model.feature_names;
    let dose: Vec<usize> = (0..names.len()).filter(|&j| crate::model::is_dose_name(&names[j])).collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method".to_string(), "statistic".into(), "Intercept".into()];
    header.extend(names.iter().cloned());
    header.extend(["sum_neg", "sum_pos", "prop_neg", "prop_pos"].map(String::from));
    w.write_record(&header)?;
    for method in method_order(report) {
        let models = report.models(&method);
        if models.is_empty() {
            continue;
        }
        let mut columns: Vec<Vec<f64>> = vec![models.iter().map(|m| m.intercept).collect()];
        for j in 0..names.len() {
            columns.push(models.iter().map(|m| m.coefficients[j]).collect());
        }
        let doses: Vec<(f64, f64, f64, f64)> = models
            .iter()
            .map(|m| dose_summary(&dose.iter().map(|&j| m.coefficients[j]).collect::<Vec<_>>()))
            .collect();
        columns.push(doses.iter().map(|d| d.0).collect());
        columns.push(doses.iter().map(|d| d.1).collect());
        columns.push(doses.iter().map(|d| d.2).collect());
        columns.push(doses.iter().map(|d| d.3).collect());
        let stats: Vec<Option<Interval>> = columns.iter().map(|c| Interval::of(c)).collect();
        for (label, pick) in [("mean", 0), ("p2.5", 1), ("p97.5", 2)] {
            let mut row = vec![method.clone(), label.to_string()];
            row.extend(stats.iter().map(|s| {
                s.map(|s| fmt([s.mean, s.low, s.high][pick])).unwrap_or_default()
            }));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
