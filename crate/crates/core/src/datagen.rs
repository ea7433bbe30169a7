//! Data-generating mechanism: correlation matrices, collinearity scaling,
//! multivariate-normal sampling, ground-truth models and VIF diagnostics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CollinError, Result};
use crate::metrics::expected_auroc;
use crate::model::{is_dose_name, sigmoid, Dataset, LinearModel};

const CORR_A: &str = include_str!("../data/corr_A.csv");
const CORR_B_HIGH: &str = include_str!("../data/corr_B_high.csv");
const CORR_C: &str = include_str!("../data/corr_C.csv");
const CORR_D_HIGH: &str = include_str!("../data/corr_D_high.csv");
const COEFFICIENTS: &str = include_str!("../data/coefficients.csv");

/// Development-set size shared by all settings.
pub const N_DEV: usize = 592;
/// Eigenvalue floor used to repair the rounded, slightly indefinite
/// B▵ and D▵ matrices.
pub const REPAIR_EIGEN_FLOOR: f64 = 1e-3;
/// Monte Carlo size used for ground-truth recalibration in the registry.
pub const REGISTRY_MC_N: usize = 200_000;
pub const REGISTRY_MC_SEED: u64 = 0x5EED_C011;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub matrix: DMatrix<f64>,
}

fn parse_correlation(text: &str, source: &Path) -> Result<CorrelationMatrix> {
    let err = |message: String| CollinError::Parse { path: source.to_path_buf(), message };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let d = names.len();
    let mut m = DMatrix::from_element(d, d, f64::NAN);
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if i >= d {
            return Err(err(format!("more than {d} rows")));
        }
        for (j, cell) in record.iter().enumerate() {
            if j >= d {
                if !cell.is_empty() {
                    return Err(err(format!("row {} has more than {d} cells", i + 1)));
                }
                continue;
            }
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| err(format!("cannot parse `{cell}`")))?;
            if !(-1.0..=1.0).contains(&v) {
                return Err(err(format!("entry {v} at ({}, {}) outside [-1, 1]", i + 1, j + 1)));
            }
            m[(i, j)] = v;
        }
        rows += 1;
    }
    if rows != d {
        return Err(err(format!("expected {d} rows, found {rows}")));
    }
    for i in 0..d {
        for j in 0..i {
            match (m[(i, j)].is_nan(), m[(j, i)].is_nan()) {
                (true, true) => return Err(err(format!("missing entry ({}, {})", i + 1, j + 1))),
                (false, true) => m[(j, i)] = m[(i, j)],
                (true, false) => m[(i, j)] = m[(j, i)],
                (false, false) => {
                    if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 {
                        return Err(err(format!("asymmetric entries at ({}, {})", i + 1, j + 1)));
                    }
                }
            }
        }
        if m[(i, i)].is_nan() {
            m[(i, i)] = 1.0;
        } else if (m[(i, i)] - 1.0).abs() > 1e-9 {
            return Err(err(format!("diagonal entry {} is {}", i + 1, m[(i, i)])));
        }
    }
    Ok(CorrelationMatrix { names, matrix: m })
}

/// Reads a full or lower-triangular correlation CSV whose header row holds
/// the predictor names.
pub fn load_correlation_matrix(path: &Path) -> Result<CorrelationMatrix> {
    let text = std::fs::read_to_string(path)?;
    parse_correlation(&text, path)
}

/// Correlation matrix shipped with the crate for a setting family
/// (`A`, `B`, `C` or `D`). B and D carry the high-collinearity matrices.
pub fn bundled_correlation(family: char) -> Result<CorrelationMatrix> {
    let (text, name) = match family.to_ascii_uppercase() {
        'A' => (CORR_A, "corr_A.csv"),
        'B' => (CORR_B_HIGH, "corr_B_high.csv"),
        'C' => (CORR_C, "corr_C.csv"),
        'D' => (CORR_D_HIGH, "corr_D_high.csv"),
        _ => return Err(CollinError::Unknown { kind: "correlation matrix", name: family.to_string() }),
    };
    parse_correlation(text, Path::new(name))
}

/// Mean coefficients for `(table, method)` from the bundled appendix tables.
/// Tables are `A`, `A_high`, `A_real`, `B`, `B_high`, `B_high_real`, … and
/// terms are named after the matching correlation matrix.
pub fn bundled_coefficients(table: &str, method: &str) -> Result<LinearModel> {
    let family = table.chars().next().unwrap_or('?');
    let names = bundled_correlation(family)
        .map_err(|_| CollinError::Unknown { kind: "coefficient table", name: table.into() })?
        .names;
    let mut reader = csv::Reader::from_reader(COEFFICIENTS.as_bytes());
    let mut intercept = None;
    let mut coefs = Vec::new();
    for record in reader.records() {
        let r = record?;
        if &r[0] != table || &r[1] != method {
            continue;
        }
        let v: f64 = r[3].parse().map_err(|_| CollinError::InvalidInput(format!("bad coefficient `{}`", &r[3])))?;
        if &r[2] == "Intercept" {
            intercept = Some(v);
        } else {
            coefs.push(v);
        }
    }
    let Some(intercept) = intercept else {
        return Err(CollinError::Unknown { kind: "coefficient table", name: format!("{table}/{method}") });
    };
    LinearModel::new(intercept, coefs, names)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VifReport {
    pub vifs: Vec<f64>,
    pub median: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_square(cov: &DMatrix<f64>) -> Result<()> {
    if !cov.is_square() {
        return Err(CollinError::dims("covariance columns", cov.nrows(), cov.ncols()));
    }
    if cov.nrows() < 2 {
        return Err(CollinError::InvalidInput("VIF needs at least 2 predictors".into()));
    }
    Ok(())
}

/// VIF_j = Σ_jj (Σ⁻¹)_jj; singular directions give +∞.
pub fn compute_vif(cov: &DMatrix<f64>) -> Result<VifReport> {
    check_square(cov)?;
    let d = cov.nrows();
    let vifs = match Cholesky::new(cov.clone()) {
        Some(ch) => {
            let inv = ch.inverse();
            let v: Vec<f64> = (0..d).map(|j| (cov[(j, j)] * inv[(j, j)]).max(1.0)).collect();
            if v.iter().all(|x| x.is_finite()) {
                v
            } else {
                vif_by_regression(cov)?
            }
        }
        None => vif_by_regression(cov)?,
    };
    let median = median(&vifs);
    Ok(VifReport { vifs, median })
}

/// VIF per predictor from the residual variance of its population
/// regression on the others (Schur complement with a pseudo-inverse).
pub fn vif_by_regression(cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square(cov)?;
    let d = cov.nrows();
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let others: Vec<usize> = (0..d).filter(|&i| i != j).collect();
        let sub = cov.select_rows(&others).select_columns(&others);
        let cross = DVector::from_fn(d - 1, |i, _| cov[(others[i], j)]);
        let eig = SymmetricEigen::new(sub);
        let tol = 1e-12 * eig.eigenvalues.amax().max(1e-300);
        let proj = eig.eigenvectors.tr_mul(&cross);
        let explained: f64 = proj
            .iter()
            .zip(eig.eigenvalues.iter())
            .filter(|(_, &l)| l > tol)
            .map(|(p, l)| p * p / l)
            .sum();
        let resid = cov[(j, j)] - explained;
        out.push(if resid <= 1e-12 * cov[(j, j)] { f64::INFINITY } else { (cov[(j, j)] / resid).max(1.0) });
    }
    Ok(out)
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn scaled_matrix(cov: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| if i == j { cov[(i, j)] } else { s * cov[(i, j)] })
}

/// Clips eigenvalues below `floor` and rescales back to unit diagonal.
pub fn repair_correlation(corr: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(corr.clone());
    let lam = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let m = v * DMatrix::from_diagonal(&lam) * v.transpose();
    let sd: Vec<f64> = (0..m.nrows()).map(|i| m[(i, i)].sqrt()).collect();
    let d = m.nrows();
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.5 * (m[(i, j)] + m[(j, i)]) / (sd[i] * sd[j]) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPopulation {
    pub names: Vec<String>,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Off-diagonal multiplier relative to the source matrix.
    pub scale_factor: f64,
    pub ground_truth: LinearModel,
    pub target_prevalence: f64,
}

impl GaussianPopulation {
    /// Zero-mean population over a correlation matrix.
    pub fn new(corr: CorrelationMatrix, ground_truth: LinearModel) -> Result<Self> {
        let d = corr.names.len();
        if ground_truth.d() != d {
            return Err(CollinError::dims("ground-truth coefficients", d, ground_truth.d()));
        }
        let lam = min_eigenvalue(&corr.matrix);
        if lam < -1e-8 {
            return Err(CollinError::NotPsd { min_eigenvalue: lam });
        }
        Ok(GaussianPopulation {
            names: corr.names,
            mean: DVector::zeros(d),
            covariance: corr.matrix,
            scale_factor: 1.0,
            ground_truth,
            target_prevalence: f64::NAN,
        })
    }

    pub fn d(&self) -> usize {
        self.names.len()
    }

    pub fn dose_mask(&self) -> Vec<bool> {
        self.names.iter().map(|n| is_dose_name(n)).collect()
    }

    pub fn median_vif(&self) -> Result<f64> {
        Ok(compute_vif(&self.covariance)?.median)
    }
}

/// Multiplies off-diagonal covariances by `s`, leaving the diagonal alone.
pub fn scale_collinearity(pop: &GaussianPopulation, s: f64) -> Result<GaussianPopulation> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(CollinError::InvalidInput(format!("scale factor must be >= 0, got {s}")));
    }
    let mut cov = scaled_matrix(&pop.covariance, s);
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.min() < 0.0 {
        let lam = eig.eigenvalues.map(|l| l.max(0.0));
        let v = &eig.eigenvectors;
        let clipped = v * DMatrix::from_diagonal(&lam) * v.transpose();
        let deviation = (0..cov.nrows())
            .map(|i| (clipped[(i, i)] - cov[(i, i)]).abs())
            .fold(0.0, f64::max);
        if deviation > 1e-6 {
            return Err(CollinError::ScaleTooLarge { scale: s, deviation });
        }
        let d = cov.nrows();
        cov = DMatrix::from_fn(d, d, |i, j| if i == j { cov[(i, i)] } else { 0.5 * (clipped[(i, j)] + clipped[(j, i)]) });
    }
    Ok(GaussianPopulation {
        covariance: cov,
        scale_factor: pop.scale_factor * s,
        ..pop.clone()
    })
}

/// Largest `s` keeping `D + s(Σ − D)` positive semi-definite (capped at 1e3).
pub fn max_psd_scale(cov: &DMatrix<f64>) -> f64 {
    let psd = |s: f64| min_eigenvalue(&scaled_matrix(cov, s)) >= 0.0;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while psd(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e3 {
            return 1e3;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if psd(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    lo
}

/// Scale factor whose scaled covariance has the target median VIF (within
/// 0.1%), or the closest attainable one with a warning.
pub fn solve_scale_for_vif(pop: &GaussianPopulation, target_median_vif: f64) -> Result<f64> {
    if !(target_median_vif >= 1.0) {
        return Err(CollinError::InvalidInput(format!(
            "target median VIF must be >= 1, got {target_median_vif}"
        )));
    }
    if target_median_vif == 1.0 {
        return Ok(0.0);
    }
    let median_at = |s: f64| -> Result<f64> { Ok(compute_vif(&scaled_matrix(&pop.covariance, s))?.median) };
    let s_max = max_psd_scale(&pop.covariance);
    let mut lo = 0.0;
    let mut hi = s_max * (1.0 - 1e-9);
    let top = median_at(hi)?;
    if top < target_median_vif {
        warn!("median VIF {target_median_vif} unattainable; closest is {top:.3} at s = {hi:.6}");
        return Ok(hi);
    }
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = median_at(mid)?;
        let rel = (m - target_median_vif).abs() / target_median_vif;
        if rel < best.0 {
            best = (rel, mid);
        }
        if rel < 1e-3 {
            return Ok(mid);
        }
        if m < target_median_vif {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    warn!("median VIF bisection stopped {:.4}% from target", best.0 * 100.0);
    Ok(best.1)
}

fn factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(cov.clone()) {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(cov.clone());
    let lam = eig.eigenvalues.min();
    if lam < -1e-8 {
        return Err(CollinError::NotPsd { min_eigenvalue: lam });
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

/// Predictor draws `n × d` from the population (normals drawn row-major).
pub fn sample_predictors(pop: &GaussianPopulation, n: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let l = factor(&pop.covariance)?;
    let d = pop.d();
    let mut z = DMatrix::<f64>::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let mut x: DMatrix<f64> = z * l.transpose();
    for mut row in x.row_iter_mut() {
        row += pop.mean.transpose();
    }
    Ok(x)
}

/// Draws `n` observations with outcomes labelled by the ground truth.
pub fn sample(pop: &GaussianPopulation, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(CollinError::InvalidInput("sample size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = sample_predictors(pop, n, &mut rng)?;
    let lp = pop.ground_truth.linear_predictor(&x)?;
    let y = lp.map(|z| (rng.random::<f64>() < sigmoid(z)) as u8 as f64);
    Dataset::new(x, y, pop.names.clone(), pop.dose_mask())
}

/// Result of matching a ground-truth model to a rescaled population.
#[derive(Debug, Clone, PartialEq)]
pub struct Recalibration {
    pub model: LinearModel,
    pub slope_multiplier: f64,
    pub intercept_shift: f64,
    pub target_auroc: f64,
    pub target_prevalence: f64,
    pub achieved_auroc: f64,
    pub achieved_prevalence: f64,
}

fn mean_risk(lp: &[f64], a: f64, b0: f64) -> f64 {
    lp.iter().map(|&l| sigmoid(a * l + b0)).sum::<f64>() / lp.len() as f64
}

fn expected_auc(lp: &[f64], a: f64, b0: f64) -> Result<f64> {
    let risk: Vec<f64> = lp.iter().map(|&l| sigmoid(a * l + b0)).collect();
    expected_auroc(lp, &risk)
}

fn bisect<F: FnMut(f64) -> Result<f64>>(mut f: F, mut lo: f64, mut hi: f64, target: f64, tol: f64) -> Result<f64> {
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if (flo - target) * (fhi - target) > 0.0 {
        return Err(CollinError::Unattainable(format!(
            "target {target:.5} outside [{flo:.5}, {fhi:.5}] over [{lo}, {hi}]"
        )));
    }
    let increasing = fhi >= flo;
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let v = f(mid)?;
        if (v - target).abs() < tol {
            break;
        }
        if (v < target) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

/// Rescales the ground-truth slope and shifts its intercept so that the
/// `after` population keeps the AUROC and prevalence of `before`.
///
/// Uses common random numbers and Rao–Blackwellized (expected) AUROC and
/// prevalence. The slope and intercept searches alternate because the
/// intercept moves the expected AUROC slightly.
pub fn recalibration(
    before: &GaussianPopulation,
    after: &GaussianPopulation,
    mc_n: usize,
    seed: u64,
) -> Result<Recalibration> {
    if before.d() != after.d() {
        return Err(CollinError::dims("population dimension", before.d(), after.d()));
    }
    if mc_n < 1000 {
        return Err(CollinError::InvalidInput(format!("mc_n must be >= 1000, got {mc_n}")));
    }
    let gt = &before.ground_truth;
    let draw = |pop: &GaussianPopulation| -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_predictors(pop, mc_n, &mut rng)?;
        let beta = DVector::from_column_slice(&gt.coefficients);
        Ok((x * beta).as_slice().to_vec())
    };
    let lp0 = draw(before)?;
    let lp1 = draw(after)?;
    let b0 = gt.intercept;
    let target_auroc = expected_auc(&lp0, 1.0, b0)?;
    let target_prev = mean_risk(&lp0, 1.0, b0);

    let (mut a, mut shift) = (1.0, 0.0);
    for _ in 0..3 {
        let log_a = bisect(|la| expected_auc(&lp1, la.exp(), b0 + shift), 1e-3f64.ln(), 1e3f64.ln(), target_auroc, 1e-5)?;
        a = log_a.exp();
        shift = bisect(|b| Ok(mean_risk(&lp1, a, b0 + b)), -30.0, 30.0, target_prev, 1e-6)?;
    }
    let achieved_auroc = expected_auc(&lp1, a, b0 + shift)?;
    let achieved_prevalence = mean_risk(&lp1, a, b0 + shift);
    if (achieved_auroc - target_auroc).abs() > 0.002 || (achieved_prevalence - target_prev).abs() > 0.002 {
        return Err(CollinError::Unattainable(format!(
            "recalibration reached AUROC {achieved_auroc:.4} (target {target_auroc:.4}), prevalence {achieved_prevalence:.4} (target {target_prev:.4})"
        )));
    }
    let model = LinearModel::new(
        b0 + shift,
        gt.coefficients.iter().map(|b| a * b).collect(),
        gt.feature_names.clone(),
    )?;
    Ok(Recalibration {
        model,
        slope_multiplier: a,
        intercept_shift: shift,
        target_auroc,
        target_prevalence: target_prev,
        achieved_auroc,
        achieved_prevalence,
    })
}

pub fn recalibrate_ground_truth(
    before: &GaussianPopulation,
    after: &GaussianPopulation,
    mc_n: usize,
    seed: u64,
) -> Result<LinearModel> {
    Ok(recalibration(before, after, mc_n, seed)?.model)
}

/// Where a ground-truth model comes from.
#[derive(Debug, Clone)]
pub enum GroundTruthSource<'a> {
    /// Mean coefficients from a bundled table, e.g. `("A", "Ridge")`.
    Bundled { table: &'a str, method: &'a str },
    /// Tune and fit Ridge on a reference dataset.
    Fit { data: &'a Dataset, seed: u64 },
}

/// Ground-truth model from a bundled table or a Ridge fit. Fitted models
/// are expressed on the standardized scale of `data`.
pub fn build_ground_truth(source: GroundTruthSource) -> Result<LinearModel> {
    match source {
        GroundTruthSource::Bundled { table, method } => bundled_coefficients(table, method),
        GroundTruthSource::Fit { data, seed } => {
            let params = crate::model::standardize_fit(data.x(), Some(data.feature_names()))?;
            let z = params.apply_dataset(data)?;
            let spec = crate::methods::MethodSpec::ridge(1.0);
            let tuned = crate::tuner::tune(&spec, &z, seed)?;
            crate::methods::fit(&tuned.best_spec, &z, &crate::optim::OptimizerConfig::default().with_seed(seed))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SettingName {
    A,
    AHigh,
    B,
    BHigh,
    C,
    CHigh,
    D,
    DHigh,
}

impl SettingName {
    pub const ALL: [SettingName; 8] = [
        SettingName::A,
        SettingName::AHigh,
        SettingName::B,
        SettingName::BHigh,
        SettingName::C,
        SettingName::CHigh,
        SettingName::D,
        SettingName::DHigh,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SettingName::A => "A",
            SettingName::AHigh => "A▵",
            SettingName::B => "B",
            SettingName::BHigh => "B▵",
            SettingName::C => "C",
            SettingName::CHigh => "C▵",
            SettingName::D => "D",
            SettingName::DHigh => "D▵",
        }
    }

    /// ASCII identifier (`A`, `A_high`, …) used in file names and tables.
    pub fn ident(self) -> &'static str {
        match self {
            SettingName::A => "A",
            SettingName::AHigh => "A_high",
            SettingName::B => "B",
            SettingName::BHigh => "B_high",
            SettingName::C => "C",
            SettingName::CHigh => "C_high",
            SettingName::D => "D",
            SettingName::DHigh => "D_high",
        }
    }

    fn family(self) -> char {
        self.ident().chars().next().unwrap()
    }

    fn is_high(self) -> bool {
        self.ident().ends_with("_high")
    }
}

impl fmt::Display for SettingName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SettingName {
    type Err = CollinError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        SettingName::ALL
            .into_iter()
            .find(|n| {
                let id = n.ident();
                t.eq_ignore_ascii_case(id)
                    || t == n.label()
                    || (n.is_high()
                        && [format!("{}^", n.family()), format!("{}high", n.family()), format!("{}-high", n.family())]
                            .iter()
                            .any(|a| t.eq_ignore_ascii_case(a)))
            })
            .ok_or_else(|| CollinError::Unknown { kind: "setting", name: s.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub name: SettingName,
    pub outcome_label: &'static str,
    pub n_dev: usize,
    pub d: usize,
    pub epv: f64,
    pub target_median_vif: f64,
}

pub fn setting_spec(name: SettingName) -> SettingSpec {
    use SettingName::*;
    let (outcome_label, d, epv, vif) = match name {
        A => ("Xerostomia", 7, 23.0, 5.0),
        AHigh => ("Xerostomia", 7, 23.0, 43.0),
        B => ("Xerostomia", 19, 8.0, 5.0),
        BHigh => ("Xerostomia", 19, 8.0, 43.0),
        C => ("Dysphagia", 13, 6.0, 7.0),
        CHigh => ("Dysphagia", 13, 6.0, 43.0),
        D => ("Dysphagia", 43, 2.0, 7.0),
        DHigh => ("Dysphagia", 43, 2.0, 43.0),
    };
    SettingSpec { name, outcome_label, n_dev: N_DEV, d, epv, target_median_vif: vif }
}

/// The un-scaled source population of a setting family with its bundled
/// Ridge ground truth. B and D start from the repaired high-VIF matrices.
pub fn base_population(name: SettingName) -> Result<GaussianPopulation> {
    let family = name.family();
    let mut corr = bundled_correlation(family)?;
    let table = match family {
        'A' => "A",
        'C' => "C",
        'B' => "B_high",
        _ => "D_high",
    };
    if matches!(family, 'B' | 'D') {
        corr.matrix = repair_correlation(&corr.matrix, REPAIR_EIGEN_FLOOR);
    }
    let gt = bundled_coefficients(table, "Ridge")?;
    let mut pop = GaussianPopulation::new(corr, gt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(REGISTRY_MC_SEED);
    let lp = pop.ground_truth.linear_predictor(&sample_predictors(&pop, REGISTRY_MC_N, &mut rng)?)?;
    pop.target_prevalence = lp.map(sigmoid).mean();
    Ok(pop)
}

/// Fully specified population for a setting. A and C use the observed
/// matrices as they are; the other settings are scaled to their target
/// median VIF with a recalibrated ground truth.
pub fn build_population(name: SettingName) -> Result<GaussianPopulation> {
    build_population_with(name, REGISTRY_MC_N, REGISTRY_MC_SEED)
}

pub fn build_population_with(name: SettingName, mc_n: usize, seed: u64) -> Result<GaussianPopulation> {
    let base = base_population(name)?;
    if matches!(name, SettingName::A | SettingName::C) {
        return Ok(base);
    }
    let target = setting_spec(name).target_median_vif;
    let s = solve_scale_for_vif(&base, target)?;
    let mut scaled = scale_collinearity(&base, s)?;
    let recal = recalibration(&base, &scaled, mc_n, seed)?;
    scaled.ground_truth = recal.model;
    scaled.target_prevalence = recal.achieved_prevalence;
    Ok(scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn corr2(rho: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])
    }

    fn pop_from(cov: DMatrix<f64>, beta: Vec<f64>, b0: f64) -> GaussianPopulation {
        let d = cov.nrows();
        let names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        GaussianPopulation::new(
            CorrelationMatrix { names: names.clone(), matrix: cov },
            LinearModel::new(b0, beta, names).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn bundled_matrices_parse() {
        let a = bundled_correlation('A').unwrap();
        let i = a.names.iter().position(|n| n == "Subm.L.Dm").unwrap();
        let j = a.names.iter().position(|n| n == "Subm.R.Dm").unwrap();
        assert_eq!(a.matrix[(i, j)], 0.89);
        assert_eq!(a.matrix[(j, i)], 0.89);
        let c = bundled_correlation('C').unwrap();
        let i = c.names.iter().position(|n| n == "PCM.Sup.Dm").unwrap();
        let j = c.names.iter().position(|n| n == "OralCavity.Ext.Dm").unwrap();
        assert_eq!(c.matrix[(i, j)], 0.95);
        assert_eq!(bundled_correlation('B').unwrap().names.len(), 19);
        assert_eq!(bundled_correlation('D').unwrap().names.len(), 43);
    }

    #[test]
    fn correlation_parsing_errors() {
        let p = Path::new("t.csv");
        assert!(parse_correlation("a,b\n1,\n0.5,1\n", p).is_ok());
        assert!(parse_correlation("a,b\n1,0.5\n0.5,1\n", p).is_ok());
        assert!(parse_correlation("a,b\n1,0.4\n0.5,1\n", p).is_err());
        assert!(parse_correlation("a,b\n1,\n1.5,1\n", p).is_err());
        assert!(parse_correlation("a,b\n1,\n", p).is_err());
        let ident = parse_correlation("a,b,c\n1,,\n0,1,\n0,0,1\n", p).unwrap();
        assert!(compute_vif(&ident.matrix).unwrap().vifs.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bundled_ground_truth_values() {
        let a = bundled_coefficients("A", "Ridge").unwrap();
        assert_eq!(a.intercept, -1.26);
        let j = a.feature_names.iter().position(|n| n == "Subm.L.Dm").unwrap();
        assert_eq!(a.coefficients[j], 0.24);
        assert_eq!(a.feature_names[6], "XER.BSL.2");
        let c = build_ground_truth(GroundTruthSource::Bundled { table: "C", method: "Ridge" }).unwrap();
        let j = c.feature_names.iter().position(|n| n == "OralCavity.Ext.Dm").unwrap();
        assert_eq!(c.coefficients[j], 0.30);
        assert!(bundled_coefficients("Z", "Ridge").is_err());
        assert!(bundled_coefficients("A", "SVM").is_err());
    }

    #[test]
    fn vif_examples() {
        let r = compute_vif(&DMatrix::identity(4, 4)).unwrap();
        assert_eq!(r.median, 1.0);
        let r = compute_vif(&corr2(0.9)).unwrap();
        for v in r.vifs {
            assert_abs_diff_eq!(v, 1.0 / (1.0 - 0.81), epsilon = 1e-12);
        }
        let singular = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let r = compute_vif(&singular).unwrap();
        assert!(r.vifs[0].is_infinite() && r.vifs[1].is_infinite());
        assert_abs_diff_eq!(r.vifs[2], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn vif_matches_sampling_regression() {
        // Regress x1 on x0 in a large sample: R² ≈ ρ².
        let pop = pop_from(corr2(0.9), vec![0.0, 0.0], 0.0);
        let ds = sample(&pop, 1_000_000, 3).unwrap();
        let x = ds.x();
        let (n, c0, c1) = (x.nrows() as f64, x.column(0), x.column(1));
        let (m0, m1) = (c0.mean(), c1.mean());
        let cov = c0.iter().zip(c1.iter()).map(|(a, b)| (a - m0) * (b - m1)).sum::<f64>() / n;
        let v0 = c0.iter().map(|a| (a - m0).powi(2)).sum::<f64>() / n;
        let v1 = c1.iter().map(|b| (b - m1).powi(2)).sum::<f64>() / n;
        let r2 = cov * cov / (v0 * v1);
        let vif = compute_vif(&corr2(0.9)).unwrap().vifs[0];
        assert!((1.0 / (1.0 - r2) - vif).abs() < 0.05, "{}", 1.0 / (1.0 - r2));
    }

    #[test]
    fn vif_routes_agree_on_bundled() {
        for f in ['A', 'C'] {
            let m = bundled_correlation(f).unwrap().matrix;
            let a = compute_vif(&m).unwrap().vifs;
            let b = vif_by_regression(&m).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-8 * x, "{x} {y}");
            }
        }
    }

    #[test]
    fn scaling_examples() {
        let pop = base_population(SettingName::A).unwrap();
        let zero = scale_collinearity(&pop, 0.0).unwrap();
        assert_eq!(zero.median_vif().unwrap(), 1.0);
        let one = scale_collinearity(&pop, 1.0).unwrap();
        assert_eq!(one.covariance, pop.covariance);
        assert!(scale_collinearity(&pop, -1.0).is_err());
        assert!(matches!(scale_collinearity(&pop, 5.0), Err(CollinError::ScaleTooLarge { .. })));
        for s in [0.3, 0.8, 1.02] {
            let sc = scale_collinearity(&pop, s).unwrap();
            for i in 0..pop.d() {
                assert_eq!(sc.covariance[(i, i)], pop.covariance[(i, i)]);
            }
        }
    }

    #[test]
    fn median_vif_monotone_in_scale() {
        for name in [SettingName::A, SettingName::C] {
            let pop = base_population(name).unwrap();
            let s_max = max_psd_scale(&pop.covariance);
            let mut prev = 0.0;
            for g in 0..20 {
                let s = s_max * 0.999 * g as f64 / 19.0;
                let m = compute_vif(&scaled_matrix(&pop.covariance, s)).unwrap().median;
                assert!(m >= 1.0 && m >= prev - 1e-9, "{name} s={s}: {m} < {prev}");
                prev = m;
            }
        }
    }

    #[test]
    fn solve_scale_examples() {
        let pop = base_population(SettingName::A).unwrap();
        assert_eq!(solve_scale_for_vif(&pop, 1.0).unwrap(), 0.0);
        assert!(solve_scale_for_vif(&pop, 0.5).is_err());
        let own = pop.median_vif().unwrap();
        let s = solve_scale_for_vif(&pop, own).unwrap();
        assert!((s - 1.0).abs() < 1e-3, "{s}");
        let s = solve_scale_for_vif(&pop, 43.0).unwrap();
        assert!(s > 1.0);
        let m = vif_by_regression(&scale_collinearity(&pop, s).unwrap().covariance).unwrap();
        assert!((median(&m) - 43.0).abs() / 43.0 < 0.01);
    }

    #[test]
    fn sampling_examples() {
        let pop = pop_from(DMatrix::identity(3, 3), vec![0.0; 3], 0.0);
        let ds = sample(&pop, 100_000, 1).unwrap();
        let x = ds.x();
        let cov = x.tr_mul(x) / 100_000.0;
        assert!((cov - DMatrix::identity(3, 3)).amax() < 0.02);
        assert!((ds.prevalence() - 0.5).abs() < 0.01);
        for j in 0..3 {
            assert!(x.column(j).mean().abs() < 4.0 / (100_000f64).sqrt());
        }
        assert_eq!(sample(&pop, 50, 9).unwrap(), sample(&pop, 50, 9).unwrap());
        assert_ne!(sample(&pop, 50, 9).unwrap(), sample(&pop, 50, 10).unwrap());
        assert!(sample(&pop, 0, 1).is_err());
    }

    #[test]
    fn sampling_singular_covariance_uses_eigen_root() {
        let pop = pop_from(corr2(1.0), vec![0.0, 0.0], 0.0);
        let ds = sample(&pop, 100, 2).unwrap();
        for i in 0..100 {
            assert!((ds.x()[(i, 0)] - ds.x()[(i, 1)]).abs() < 1e-6);
        }
    }

    #[test]
    fn recalibration_fixed_point() {
        let pop = base_population(SettingName::A).unwrap();
        let r = recalibration(&pop, &pop, 100_000, 4).unwrap();
        assert!((r.slope_multiplier - 1.0).abs() < 0.01);
        assert!(r.intercept_shift.abs() < 0.01);
    }

    #[test]
    fn recalibration_restores_signal_under_independence() {
        // Halving every predictor's variance halves the linear predictor's sd;
        // doubling the slope restores both AUROC and prevalence.
        let before = pop_from(DMatrix::identity(3, 3), vec![0.8, -0.4, 0.3], -1.0);
        let mut after = before.clone();
        after.covariance = DMatrix::identity(3, 3) * 0.25;
        let r = recalibration(&before, &after, 200_000, 5).unwrap();
        assert!((r.slope_multiplier - 2.0).abs() < 0.02, "{}", r.slope_multiplier);
        assert!(r.intercept_shift.abs() < 0.02);
        let a = sample(&before, 1_000_000, 6).unwrap();
        let mut after_pop = after.clone();
        after_pop.ground_truth = r.model;
        let b = sample(&after_pop, 1_000_000, 7).unwrap();
        let auc = |ds: &Dataset, m: &LinearModel| {
            let p = crate::model::predict_risk(m, ds.x()).unwrap();
            crate::metrics::auroc(p.as_slice(), ds.y().as_slice()).unwrap()
        };
        assert!((auc(&a, &before.ground_truth) - auc(&b, &after_pop.ground_truth)).abs() < 0.005);
    }

    #[test]
    fn setting_registry_matches_table() {
        let a = setting_spec(SettingName::A);
        assert_eq!((a.n_dev, a.d, a.epv, a.target_median_vif), (592, 7, 23.0, 5.0));
        let d = setting_spec(SettingName::DHigh);
        assert_eq!((d.d, d.epv, d.target_median_vif, d.outcome_label), (43, 2.0, 43.0, "Dysphagia"));
        for n in SettingName::ALL {
            assert_eq!(n.ident().parse::<SettingName>().unwrap(), n);
            assert_eq!(n.label().parse::<SettingName>().unwrap(), n);
            let fam = bundled_correlation(n.family()).unwrap();
            assert_eq!(fam.names.len(), setting_spec(n).d);
        }
        assert_eq!("a^".parse::<SettingName>().unwrap(), SettingName::AHigh);
        assert!("E".parse::<SettingName>().is_err());
    }

    #[test]
    fn repaired_matrices_are_positive_definite() {
        for f in ['B', 'D'] {
            let raw = bundled_correlation(f).unwrap().matrix;
            assert!(min_eigenvalue(&raw) < 0.0);
            let fixed = repair_correlation(&raw, REPAIR_EIGEN_FLOOR);
            assert!(min_eigenvalue(&fixed) > 0.0);
            assert!((0..fixed.nrows()).all(|i| fixed[(i, i)] == 1.0));
            assert!((&fixed - &raw).amax() < 0.05);
        }
    }
}
