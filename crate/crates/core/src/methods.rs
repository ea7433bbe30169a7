//! The eight estimators behind one interface. Every method returns a
//! [`LinearModel`] over the (standardized) input predictors.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CollinError, Result};
use crate::losses::{pca_loss_grad, theta_to_model, LaeObjective, LatentSpec, LogisticObjective, PenaltySpec};
use crate::model::{Dataset, LinearModel};
use crate::optim::{minimize, minimize_dropout_stochastic, minimize_l1_prox, minimize_projected, OptimizerConfig};

/// Maximum |column mean| accepted as "standardized" input.
pub const STANDARDIZED_MEAN_TOL: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LR")]
    Lr,
    Lasso,
    Ridge,
    ElasticNet,
    Dropout,
    #[serde(rename = "PCLR")]
    Pclr,
    #[serde(rename = "LAELR")]
    Laelr,
    #[serde(rename = "LR_NN")]
    LrNn,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Lr,
        Method::Lasso,
        Method::Ridge,
        Method::ElasticNet,
        Method::Pclr,
        Method::Laelr,
        Method::Dropout,
        Method::LrNn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lr => "LR",
            Method::Lasso => "Lasso",
            Method::Ridge => "Ridge",
            Method::ElasticNet => "ElasticNet",
            Method::Dropout => "Dropout",
            Method::Pclr => "PCLR",
            Method::Laelr => "LAELR",
            Method::LrNn => "LR_NN",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CollinError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name().replace('_', "").to_ascii_lowercase() == key)
            .ok_or_else(|| CollinError::Unknown { kind: "method", name: s.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropoutMode {
    /// Per-epoch random coefficient masks (inverted dropout).
    Stochastic,
    /// Deterministic quadratic approximation of the dropout penalty.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PcaMode {
    Eigen,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    pub penalty: PenaltySpec,
    /// Number of latent components (PCLR, LAELR).
    pub k: usize,
    /// Inverse reconstruction-loss importance (LAELR).
    pub c_lae: f64,
    pub dropout_mode: DropoutMode,
    pub pca_mode: PcaMode,
}

impl MethodSpec {
    fn base(method: Method, penalty: PenaltySpec) -> Self {
        MethodSpec {
            method,
            penalty,
            k: 1,
            c_lae: 1.0,
            dropout_mode: DropoutMode::Stochastic,
            pca_mode: PcaMode::Eigen,
        }
    }

    pub fn lr() -> Self {
        Self::base(Method::Lr, PenaltySpec::none())
    }

    pub fn lr_nn() -> Self {
        Self::base(Method::LrNn, PenaltySpec::none())
    }

    pub fn lasso(c_l1: f64) -> Self {
        Self::base(Method::Lasso, PenaltySpec::l1(c_l1))
    }

    pub fn ridge(c_l2: f64) -> Self {
        Self::base(Method::Ridge, PenaltySpec::l2(c_l2))
    }

    pub fn elastic_net(c_l1: f64, c_l2: f64) -> Self {
        Self::base(Method::ElasticNet, PenaltySpec::elastic_net(c_l1, c_l2))
    }

    pub fn dropout(delta: f64) -> Self {
        Self::base(Method::Dropout, PenaltySpec::dropout(delta))
    }

    pub fn dropout_analytic(delta: f64) -> Self {
        MethodSpec { dropout_mode: DropoutMode::Analytic, ..Self::dropout(delta) }
    }

    pub fn pclr(k: usize) -> Self {
        MethodSpec { k, ..Self::base(Method::Pclr, PenaltySpec::none()) }
    }

    pub fn laelr(k: usize, c_lae: f64) -> Self {
        MethodSpec { k, c_lae, ..Self::base(Method::Laelr, PenaltySpec::none()) }
    }

    /// Spec with mid-range default hyperparameters for `d` predictors.
    pub fn default_for(method: Method, d: usize) -> Self {
        let k = d.clamp(1, 4);
        match method {
            Method::Lr => Self::lr(),
            Method::LrNn => Self::lr_nn(),
            Method::Lasso => Self::lasso(1.0),
            Method::Ridge => Self::ridge(1.0),
            Method::ElasticNet => Self::elastic_net(1.0, 1.0),
            Method::Dropout => Self::dropout(0.3),
            Method::Pclr => Self::pclr(k),
            Method::Laelr => Self::laelr(k, 1.0),
        }
    }

    /// Spec for `method` with hyperparameter values given in the order of
    /// [`hyperparameter_space`].
    pub fn from_values(method: Method, d: usize, values: &[f64]) -> Result<Self> {
        let space = hyperparameter_space(method, d);
        if values.len() != space.len() {
            return Err(CollinError::dims("hyperparameter values", space.len(), values.len()));
        }
        let mut spec = Self::default_for(method, d);
        for (hp, &v) in space.iter().zip(values) {
            spec.set(hp.name, v)?;
        }
        spec.validate(d)?;
        Ok(spec)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        match name {
            "c_l1" => self.penalty.c_l1 = value,
            "c_l2" => self.penalty.c_l2 = value,
            "delta" => self.penalty.delta = value,
            "c_lae" => self.c_lae = value,
            "k" => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(CollinError::InvalidHyperparameter(format!("k must be a positive integer, got {value}")));
                }
                self.k = value as usize;
            }
            _ => return Err(CollinError::Unknown { kind: "hyperparameter", name: name.to_string() }),
        }
        Ok(())
    }

    /// Current values of the tunable hyperparameters, in space order.
    pub fn values(&self, d: usize) -> Vec<(&'static str, f64)> {
        hyperparameter_space(self.method, d)
            .iter()
            .map(|hp| {
                let v = match hp.name {
                    "c_l1" => self.penalty.c_l1,
                    "c_l2" => self.penalty.c_l2,
                    "delta" => self.penalty.delta,
                    "c_lae" => self.c_lae,
                    _ => self.k as f64,
                };
                (hp.name, v)
            })
            .collect()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        self.penalty.validate()?;
        if matches!(self.method, Method::Pclr | Method::Laelr) && (self.k == 0 || self.k > d) {
            return Err(CollinError::InvalidHyperparameter(format!(
                "k must lie in [1, {d}], got {}",
                self.k
            )));
        }
        if self.method == Method::Laelr && !(self.c_lae > 0.0 && self.c_lae.is_finite()) {
            return Err(CollinError::InvalidHyperparameter(format!("c_lae must be positive, got {}", self.c_lae)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prior {
    Linear,
    LogLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameter {
    pub name: &'static str,
    pub low: f64,
    pub high: f64,
    pub prior: Prior,
    pub integer: bool,
}

const C_RANGE: (f64, f64) = (1e-3, 1e2);

fn log_c(name: &'static str) -> Hyperparameter {
    Hyperparameter { name, low: C_RANGE.0, high: C_RANGE.1, prior: Prior::LogLinear, integer: false }
}

fn k_range(d: usize) -> Hyperparameter {
    let low = 4.min(d).max(1) as f64;
    Hyperparameter { name: "k", low, high: d.max(1) as f64, prior: Prior::Linear, integer: true }
}

/// Tunable hyperparameters of `method` for `d` predictors.
pub fn hyperparameter_space(method: Method, d: usize) -> Vec<Hyperparameter> {
    match method {
        Method::Lr | Method::LrNn => vec![],
        Method::Lasso => vec![log_c("c_l1")],
        Method::Ridge => vec![log_c("c_l2")],
        Method::ElasticNet => vec![log_c("c_l1"), log_c("c_l2")],
        Method::Dropout => vec![Hyperparameter {
            name: "delta",
            low: 0.1,
            high: 0.5,
            prior: Prior::Linear,
            integer: false,
        }],
        Method::Pclr => vec![k_range(d)],
        Method::Laelr => vec![k_range(d), log_c("c_lae")],
    }
}

fn check_standardized(data: &Dataset) -> Result<()> {
    if data.n() == 0 {
        return Err(CollinError::InvalidInput("dataset has no observations".into()));
    }
    for (j, col) in data.x().column_iter().enumerate() {
        let mean = col.mean();
        if mean.abs() > STANDARDIZED_MEAN_TOL {
            return Err(CollinError::InvalidInput(format!(
                "predictor `{}` has mean {mean:.4}; standardize before fitting",
                data.feature_names()[j]
            )));
        }
    }
    Ok(())
}

/// Fits `spec` on standardized `data`.
pub fn fit(spec: &MethodSpec, data: &Dataset, config: &OptimizerConfig) -> Result<LinearModel> {
    spec.validate(data.d())?;
    check_standardized(data)?;
    let d = data.d();
    let names = data.feature_names().to_vec();
    let init = DVector::zeros(d + 1);
    match spec.method {
        Method::Lr | Method::Ridge => {
            let obj = LogisticObjective::new(data, spec.penalty)?;
            let r = minimize(|t| obj.value_grad(t), init, config)?;
            theta_to_model(&r.params, names)
        }
        Method::Lasso | Method::ElasticNet => {
            let obj = LogisticObjective::new(data, spec.penalty)?;
            let weights = obj.l1_weights().unwrap_or_else(|| vec![0.0; d + 1]);
            let r = minimize_l1_prox(|t| obj.smooth_value_grad(t), &weights, init, config)?;
            theta_to_model(&r.params, names)
        }
        Method::Dropout => match spec.dropout_mode {
            DropoutMode::Stochastic => minimize_dropout_stochastic(data, spec.penalty.delta, config),
            DropoutMode::Analytic => {
                let obj = LogisticObjective::new(data, PenaltySpec::dropout(spec.penalty.delta))?;
                let r = minimize(|t| obj.value_grad(t), init, config)?;
                theta_to_model(&r.params, names)
            }
        },
        Method::LrNn => {
            let obj = LogisticObjective::new(data, PenaltySpec::none())?;
            let r = minimize_projected(|t| obj.value_grad(t), init, &data.dose_indices(), config)?;
            theta_to_model(&r.params, names)
        }
        Method::Pclr => fit_pclr_with(spec.k, spec.pca_mode, data, config),
        Method::Laelr => fit_laelr(spec.k, spec.c_lae, data, config),
    }
}

fn sign_normalize(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let means = x.row_mean();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= &means;
    }
    c.tr_mul(&c) / n
}

/// Principal directions of `cov` sorted by decreasing eigenvalue, as rows
/// (each with its largest-magnitude entry positive), with their eigenvalues.
pub fn eigen_directions(cov: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let d = cov.nrows();
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut w = DMatrix::zeros(d, d);
    for (r, &c) in order.iter().enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        sign_normalize(&mut v);
        for j in 0..d {
            w[(r, j)] = v[j];
        }
    }
    (w, order.iter().map(|&c| eig.eigenvalues[c]).collect())
}

/// Top-`k` principal directions (k×d, orthonormal rows) of `x`.
pub fn pca_components(x: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let d = x.ncols();
    if k == 0 || k > d {
        return Err(CollinError::InvalidHyperparameter(format!("k must lie in [1, {d}], got {k}")));
    }
    let (w, _) = eigen_directions(&covariance(x));
    Ok(w.rows(0, k).into_owned())
}

/// Top-`k` principal directions found by Adam on `‖X − X Wᵀ W‖²`, then
/// orthonormalized and rotated to the principal axes of the fitted subspace.
pub fn pca_components_gd(x: &DMatrix<f64>, k: usize, config: &OptimizerConfig) -> Result<DMatrix<f64>> {
    let d = x.ncols();
    if k == 0 || k > d {
        return Err(CollinError::InvalidHyperparameter(format!("k must lie in [1, {d}], got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scale = 1.0 / (d as f64).sqrt();
    let init = DVector::from_fn(k * d, |_, _| rng.random_range(-scale..scale));
    let r = minimize(
        |t| {
            let w = DMatrix::from_column_slice(k, d, t.as_slice());
            let (v, g) = pca_loss_grad(&w, x);
            (v, DVector::from_column_slice(g.as_slice()))
        },
        init,
        config,
    )?;
    let w = DMatrix::from_column_slice(k, d, r.params.as_slice());
    let q = w.transpose().qr().q();
    let h = x * &q;
    let (rot, _) = eigen_directions(&covariance(&h));
    let mut out = rot * q.transpose();
    for mut row in out.row_iter_mut() {
        let mut v: Vec<f64> = row.iter().copied().collect();
        sign_normalize(&mut v);
        row.copy_from_slice(&v);
    }
    Ok(out)
}

/// PCLR with eigendecomposition-based components.
pub fn fit_pclr(k: usize, data: &Dataset, config: &OptimizerConfig) -> Result<LinearModel> {
    fit_pclr_with(k, PcaMode::Eigen, data, config)
}

fn fit_pclr_with(k: usize, mode: PcaMode, data: &Dataset, config: &OptimizerConfig) -> Result<LinearModel> {
    pclr_latent(k, mode, data, config)?.to_linear_model(data.feature_names().to_vec())
}

/// The PCLR pipeline in latent form: encoder rows are the components and
/// `γ, γ₀` the logistic fit on the scores `X Wᵀ`.
pub fn pclr_latent(k: usize, mode: PcaMode, data: &Dataset, config: &OptimizerConfig) -> Result<LatentSpec> {
    let w = match mode {
        PcaMode::Eigen => pca_components(data.x(), k)?,
        PcaMode::GradientDescent => pca_components_gd(data.x(), k, config)?,
    };
    let mut scores = data.x() * w.transpose();
    // Directions with no variance would otherwise carry rounding noise that
    // Adam's normalized steps amplify.
    let total: f64 = scores.column_iter().map(|c| c.norm_squared()).sum();
    for mut col in scores.column_iter_mut() {
        if col.norm_squared() <= 1e-20 * total {
            col.fill(0.0);
        }
    }
    let latent = Dataset::unnamed(scores, data.y().clone())?;
    let obj = LogisticObjective::new(&latent, PenaltySpec::none())?;
    let r = minimize(|t| obj.value_grad(t), DVector::zeros(k + 1), config)?;
    Ok(LatentSpec {
        k,
        c_lae: 1.0,
        decoder_v: w.transpose(),
        encoder_w: w,
        gamma: r.params.rows(0, k).into_owned(),
        gamma0: r.params[k],
    })
}

pub fn fit_laelr(k: usize, c_lae: f64, data: &Dataset, config: &OptimizerConfig) -> Result<LinearModel> {
    laelr_latent(k, c_lae, data, config)?.to_linear_model(data.feature_names().to_vec())
}

/// Jointly optimized encoder, decoder and latent logistic model, started
/// from the PCA solution with zero latent coefficients.
pub fn laelr_latent(k: usize, c_lae: f64, data: &Dataset, config: &OptimizerConfig) -> Result<LatentSpec> {
    let obj = LaeObjective::new(data, k, c_lae)?;
    let w = pca_components(data.x(), k)?;
    let start = LatentSpec {
        k,
        c_lae,
        decoder_v: w.transpose(),
        encoder_w: w,
        gamma: DVector::zeros(k),
        gamma0: 0.0,
    };
    let r = minimize(|t| obj.value_grad(t), obj.pack(&start), config)?;
    Ok(obj.unpack(&r.params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{nll, reconstruction_loss};
    use crate::model::{predict_risk, sigmoid, standardize_fit};
    use rand_distr::{Distribution, StandardNormal};

    fn synth(n: usize, d: usize, beta: &[f64], seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        let p = standardize_fit(&raw, None).unwrap();
        let x = p.apply(&raw).unwrap();
        let y = DVector::from_fn(n, |i, _| {
            let z: f64 = (0..d).map(|j| x[(i, j)] * beta[j]).sum::<f64>() - 0.5;
            (rng.random::<f64>() < sigmoid(z)) as u8 as f64
        });
        Dataset::unnamed(x, y).unwrap()
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("lr_nn".parse::<Method>().unwrap(), Method::LrNn);
        assert_eq!("elasticnet".parse::<Method>().unwrap(), Method::ElasticNet);
        assert!("svm".parse::<Method>().is_err());
    }

    #[test]
    fn space_examples() {
        assert!(hyperparameter_space(Method::Lr, 7).is_empty());
        assert!(hyperparameter_space(Method::LrNn, 7).is_empty());
        let en = hyperparameter_space(Method::ElasticNet, 7);
        assert_eq!(en.len(), 2);
        assert!(en.iter().all(|h| h.prior == Prior::LogLinear && h.low == 1e-3 && h.high == 1e2));
        let k = &hyperparameter_space(Method::Pclr, 7)[0];
        assert_eq!((k.low, k.high, k.integer), (4.0, 7.0, true));
        let k = &hyperparameter_space(Method::Laelr, 3)[0];
        assert_eq!((k.low, k.high), (3.0, 3.0));
        let dr = &hyperparameter_space(Method::Dropout, 7)[0];
        assert_eq!((dr.low, dr.high, dr.prior), (0.1, 0.5, Prior::Linear));
    }

    #[test]
    fn from_values_roundtrip() {
        let s = MethodSpec::from_values(Method::Laelr, 7, &[5.0, 0.2]).unwrap();
        assert_eq!((s.k, s.c_lae), (5, 0.2));
        assert_eq!(s.values(7), vec![("k", 5.0), ("c_lae", 0.2)]);
        assert!(MethodSpec::from_values(Method::Pclr, 7, &[9.0]).is_err());
        assert!(MethodSpec::from_values(Method::Lasso, 7, &[]).is_err());
    }

    #[test]
    fn rejects_unstandardized_input() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y = DVector::from_fn(10, |i, _| (i % 2) as f64);
        let ds = Dataset::unnamed(x, y).unwrap();
        assert!(fit(&MethodSpec::lr(), &ds, &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn ridge_huge_c_matches_lr() {
        let ds = synth(300, 3, &[1.0, -0.5, 0.2], 1);
        let cfg = OptimizerConfig::default();
        let lr = fit(&MethodSpec::lr(), &ds, &cfg).unwrap();
        let ridge = fit(&MethodSpec::ridge(1e12), &ds, &cfg).unwrap();
        assert!(dist(&lr.coefficients, &ridge.coefficients) < 1e-3);
    }

    #[test]
    fn lasso_tiny_c_zeroes_coefficients() {
        let ds = synth(300, 3, &[1.0, -0.5, 0.2], 2);
        let m = fit(&MethodSpec::lasso(1e-6), &ds, &OptimizerConfig::default()).unwrap();
        assert!(m.coefficients.iter().all(|b| b.abs() < 1e-4), "{:?}", m.coefficients);
        let ybar = ds.prevalence();
        assert!((m.intercept - (ybar / (1.0 - ybar)).ln()).abs() < 1e-3);
        let m = fit(&MethodSpec::lasso(1e-4), &ds, &OptimizerConfig::default()).unwrap();
        assert_eq!(m.coefficients.iter().filter(|b| b.abs() > 0.01).count(), 0);
    }

    #[test]
    fn lr_null_effects_near_zero() {
        let ds = synth(10_000, 3, &[0.0, 0.0, 0.0], 3);
        let m = fit(&MethodSpec::lr(), &ds, &OptimizerConfig::default()).unwrap();
        assert!(m.coefficients.iter().all(|b| b.abs() < 0.05), "{:?}", m.coefficients);
    }

    #[test]
    fn ridge_refit_bitwise_reproducible() {
        let ds = synth(200, 3, &[1.0, 0.0, -1.0], 4);
        let cfg = OptimizerConfig::default().with_seed(5);
        for spec in [MethodSpec::ridge(0.5), MethodSpec::dropout(0.3), MethodSpec::laelr(2, 1.0)] {
            assert_eq!(fit(&spec, &ds, &cfg).unwrap(), fit(&spec, &ds, &cfg).unwrap());
        }
    }

    #[test]
    fn lr_nn_dose_nonnegative() {
        let ds = synth(300, 3, &[-1.0, 0.5, -0.3], 6).with_dose_mask(vec![true, false, true]).unwrap();
        let m = fit(&MethodSpec::lr_nn(), &ds, &OptimizerConfig::default()).unwrap();
        assert!(m.coefficients[0] >= 0.0 && m.coefficients[2] >= 0.0);
        assert!(m.coefficients[1] > 0.2);
    }

    #[test]
    fn pclr_rewrite_identity_all_k() {
        let ds = synth(200, 5, &[0.5, 0.5, -0.3, 0.0, 0.2], 7);
        let cfg = OptimizerConfig::default();
        for k in 1..=5 {
            let latent = pclr_latent(k, PcaMode::Eigen, &ds, &cfg).unwrap();
            assert!(latent.orthonormality_defect() < 1e-8);
            let scores = ds.x() * latent.encoder_w.transpose();
            let pipeline = (scores * &latent.gamma).add_scalar(latent.gamma0).map(sigmoid);
            let model = latent.to_linear_model(ds.feature_names().to_vec()).unwrap();
            let direct = predict_risk(&model, ds.x()).unwrap();
            assert!((pipeline - direct).amax() < 1e-10);
        }
    }

    #[test]
    fn pclr_full_rank_matches_lr() {
        let ds = synth(300, 4, &[0.8, -0.4, 0.3, 0.0], 8);
        let cfg = OptimizerConfig { max_epochs: 20_000, patience: 2_000, learning_rate: 0.01, ..Default::default() };
        let lr = fit(&MethodSpec::lr(), &ds, &cfg).unwrap();
        let pclr = fit(&MethodSpec::pclr(4), &ds, &cfg).unwrap();
        let diff = (predict_risk(&lr, ds.x()).unwrap() - predict_risk(&pclr, ds.x()).unwrap()).amax();
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn pclr_duplicated_columns_equal() {
        let base = synth(200, 3, &[0.5, -0.5, 0.3], 9);
        let mut x = DMatrix::zeros(200, 4);
        x.columns_mut(0, 3).copy_from(base.x());
        x.set_column(3, &base.x().column(0));
        let ds = Dataset::unnamed(x, base.y().clone()).unwrap();
        for k in 1..=4 {
            let m = fit_pclr(k, &ds, &OptimizerConfig::default()).unwrap();
            assert!((m.coefficients[0] - m.coefficients[3]).abs() < 1e-8, "k={k}");
        }
    }

    #[test]
    fn pca_gradient_path_matches_eigen_subspace() {
        let ds = synth(200, 4, &[0.0; 4], 10);
        let mut x = ds.x().clone();
        let c0 = x.column(0).into_owned();
        x.set_column(1, &(&c0 * 0.9 + x.column(1) * 0.3));
        let cfg = OptimizerConfig { max_epochs: 5000, patience: 1000, learning_rate: 0.01, seed: 3, ..Default::default() };
        let eig = pca_components(&x, 2).unwrap();
        let gd = pca_components_gd(&x, 2, &cfg).unwrap();
        let proj = |w: &DMatrix<f64>| w.transpose() * w;
        assert!((proj(&eig) - proj(&gd)).amax() < 1e-4);
    }

    #[test]
    fn laelr_limits() {
        let ds = synth(300, 4, &[0.8, -0.4, 0.3, 0.1], 11);
        let cfg = OptimizerConfig::default();

        let lr = fit(&MethodSpec::lr(), &ds, &cfg).unwrap();
        let lr_nll = nll(&lr, &ds).unwrap();
        let weak = fit_laelr(2, 1e12, &ds, &cfg).unwrap();
        let weak_nll = nll(&weak, &ds).unwrap();
        assert!((weak_nll - lr_nll).abs() / lr_nll < 0.01, "{weak_nll} vs {lr_nll}");

        let strong = laelr_latent(2, 1e-12, &ds, &cfg).unwrap();
        let rec = reconstruction_loss(&strong.encoder_w, &strong.decoder_v, ds.x()).unwrap();
        let w = pca_components(ds.x(), 2).unwrap();
        let opt = reconstruction_loss(&w, &w.transpose(), ds.x()).unwrap();
        assert!(rec <= opt * 1.01, "{rec} vs {opt}");

        let full = laelr_latent(4, 1.0, &ds, &cfg).unwrap();
        let rec = reconstruction_loss(&full.encoder_w, &full.decoder_v, ds.x()).unwrap();
        assert!(rec < 1e-3 * ds.x().norm_squared(), "{rec}");
        let m = full.to_linear_model(ds.feature_names().to_vec()).unwrap();
        assert!((nll(&m, &ds).unwrap() - lr_nll).abs() / lr_nll < 0.01);
    }

    #[test]
    fn invalid_k() {
        let ds = synth(50, 3, &[0.0; 3], 12);
        assert!(fit(&MethodSpec::pclr(0), &ds, &OptimizerConfig::default()).is_err());
        assert!(fit(&MethodSpec::laelr(4, 1.0), &ds, &OptimizerConfig::default()).is_err());
        assert!(fit(&MethodSpec::laelr(2, -1.0), &ds, &OptimizerConfig::default()).is_err());
    }
}
