//! Objectives and analytic gradients.
//!
//! Logistic objectives take a flat parameter vector laid out as
//! `[β_1, …, β_d, β_0]` (intercept last).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CollinError, Result};
use crate::model::{sigmoid, Dataset, LinearModel};

/// Probabilities inside logarithms are clamped to `[P_CLAMP, 1 - P_CLAMP]`.
pub const P_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    None,
    L1,
    L2,
    ElasticNet,
    DropoutAnalytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    /// Inverse ℓ1 importance.
    pub c_l1: f64,
    /// Inverse ℓ2 importance.
    pub c_l2: f64,
    /// Dropout ratio.
    pub delta: f64,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        Self::none()
    }
}

impl PenaltySpec {
    pub fn none() -> Self {
        PenaltySpec {
            kind: PenaltyKind::None,
            c_l1: 1.0,
            c_l2: 1.0,
            delta: 0.5,
        }
    }

    pub fn l1(c_l1: f64) -> Self {
        PenaltySpec { kind: PenaltyKind::L1, c_l1, ..Self::none() }
    }

    pub fn l2(c_l2: f64) -> Self {
        PenaltySpec { kind: PenaltyKind::L2, c_l2, ..Self::none() }
    }

    pub fn elastic_net(c_l1: f64, c_l2: f64) -> Self {
        PenaltySpec { kind: PenaltyKind::ElasticNet, c_l1, c_l2, ..Self::none() }
    }

    pub fn dropout(delta: f64) -> Self {
        PenaltySpec { kind: PenaltyKind::DropoutAnalytic, delta, ..Self::none() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_l1.is_finite() && self.c_l2.is_finite() && self.delta.is_finite()) {
            return Err(CollinError::InvalidHyperparameter(
                "penalty fields must be finite".into(),
            ));
        }
        let uses_l1 = matches!(self.kind, PenaltyKind::L1 | PenaltyKind::ElasticNet);
        let uses_l2 = matches!(self.kind, PenaltyKind::L2 | PenaltyKind::ElasticNet);
        if uses_l1 && self.c_l1 <= 0.0 {
            return Err(CollinError::InvalidHyperparameter(format!(
                "c_l1 must be positive, got {}",
                self.c_l1
            )));
        }
        if uses_l2 && self.c_l2 <= 0.0 {
            return Err(CollinError::InvalidHyperparameter(format!(
                "c_l2 must be positive, got {}",
                self.c_l2
            )));
        }
        if self.kind == PenaltyKind::DropoutAnalytic && !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CollinError::InvalidHyperparameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// Weight on Σ|β_j|, zero when the kind has no ℓ1 part.
    pub fn l1_weight(&self) -> f64 {
        match self.kind {
            PenaltyKind::L1 | PenaltyKind::ElasticNet => 1.0 / self.c_l1,
            _ => 0.0,
        }
    }

    /// Weight on Σβ_j², zero when the kind has no ℓ2 part.
    pub fn l2_weight(&self) -> f64 {
        match self.kind {
            PenaltyKind::L2 | PenaltyKind::ElasticNet => 1.0 / self.c_l2,
            _ => 0.0,
        }
    }

    fn dropout_kappa(&self) -> f64 {
        match self.kind {
            PenaltyKind::DropoutAnalytic => 0.5 * self.delta / (1.0 - self.delta),
            _ => 0.0,
        }
    }
}

/// Latent-space parameters shared by PCLR and LAELR.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSpec {
    pub k: usize,
    pub c_lae: f64,
    /// Encoder, k×d.
    pub encoder_w: DMatrix<f64>,
    /// Decoder, d×k.
    pub decoder_v: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub gamma0: f64,
}

impl LatentSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.encoder_w.ncols();
        if self.k == 0 || self.k > d {
            return Err(CollinError::InvalidHyperparameter(format!(
                "k must lie in [1, {d}], got {}",
                self.k
            )));
        }
        if self.encoder_w.nrows() != self.k {
            return Err(CollinError::dims("encoder rows", self.k, self.encoder_w.nrows()));
        }
        if self.decoder_v.shape() != (d, self.k) {
            return Err(CollinError::dims("decoder rows", d, self.decoder_v.nrows()));
        }
        if self.gamma.len() != self.k {
            return Err(CollinError::dims("latent coefficients", self.k, self.gamma.len()));
        }
        if !(self.c_lae > 0.0 && self.c_lae.is_finite()) {
            return Err(CollinError::InvalidHyperparameter(format!(
                "c_lae must be positive, got {}",
                self.c_lae
            )));
        }
        Ok(())
    }

    /// `max |W Wᵀ − I|`, the orthonormality defect of the encoder rows.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = &self.encoder_w * self.encoder_w.transpose();
        (g - DMatrix::identity(self.k, self.k)).amax()
    }

    /// Coefficients in predictor space: β = Wᵀγ, β₀ = γ₀.
    pub fn to_linear_model(&self, feature_names: Vec<String>) -> Result<LinearModel> {
        let beta = self.encoder_w.transpose() * &self.gamma;
        LinearModel::new(self.gamma0, beta.as_slice().to_vec(), feature_names)
    }
}

fn check_model(model: &LinearModel, data: &Dataset) -> Result<()> {
    if model.d() != data.d() {
        return Err(CollinError::dims("model coefficients", data.d(), model.d()));
    }
    Ok(())
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

fn nll_from_probs(p: &DVector<f64>, y: &DVector<f64>) -> f64 {
    p.iter()
        .zip(y.iter())
        .map(|(&p, &y)| {
            let p = clamp_p(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum()
}

/// Summed negative log-likelihood of a binary outcome under `model`.
pub fn nll(model: &LinearModel, data: &Dataset) -> Result<f64> {
    check_model(model, data)?;
    let p = model.linear_predictor(data.x())?.map(sigmoid);
    Ok(nll_from_probs(&p, data.y()))
}

/// Summed log-likelihood of outcomes `y` under predicted risks `p`.
pub fn log_likelihood(p: &DVector<f64>, y: &DVector<f64>) -> f64 {
    -nll_from_probs(p, y)
}

/// Coefficient penalty; the intercept never contributes.
pub fn penalty(spec: &PenaltySpec, model: &LinearModel, data: &Dataset) -> Result<f64> {
    spec.validate()?;
    check_model(model, data)?;
    let beta = &model.coefficients;
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let l2: f64 = beta.iter().map(|b| b * b).sum();
    Ok(match spec.kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::L1 => l1 / spec.c_l1,
        PenaltyKind::L2 => l2 / spec.c_l2,
        PenaltyKind::ElasticNet => l1 / spec.c_l1 + l2 / spec.c_l2,
        PenaltyKind::DropoutAnalytic => {
            let objective = LogisticObjective::new(data, *spec)?;
            objective.dropout_term(&model_to_theta(model)).0
        }
    })
}

/// Squared Frobenius norm of `X − X Wᵀ Vᵀ` (observations as rows).
pub fn reconstruction_loss(w: &DMatrix<f64>, v: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<f64> {
    let (k, d) = w.shape();
    if x.ncols() != d {
        return Err(CollinError::dims("encoder columns", x.ncols(), d));
    }
    if v.shape() != (d, k) {
        return Err(CollinError::dims("decoder shape", d * k, v.nrows() * v.ncols()));
    }
    let r = x - x * w.transpose() * v.transpose();
    Ok(r.norm_squared())
}

pub fn model_to_theta(model: &LinearModel) -> DVector<f64> {
    let d = model.d();
    DVector::from_fn(d + 1, |i, _| if i < d { model.coefficients[i] } else { model.intercept })
}

pub fn theta_to_model(theta: &DVector<f64>, feature_names: Vec<String>) -> Result<LinearModel> {
    let d = theta.len() - 1;
    LinearModel::new(theta[d], theta.rows(0, d).iter().copied().collect(), feature_names)
}

/// Logistic negative log-likelihood plus a coefficient penalty, over the
/// flat parameter layout `[β, β₀]`.
#[derive(Debug, Clone)]
pub struct LogisticObjective<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    x_sq: Option<DMatrix<f64>>,
    penalty: PenaltySpec,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(data: &'a Dataset, penalty: PenaltySpec) -> Result<Self> {
        Self::from_parts(data.x(), data.y(), penalty)
    }

    pub fn from_parts(x: &'a DMatrix<f64>, y: &'a DVector<f64>, penalty: PenaltySpec) -> Result<Self> {
        penalty.validate()?;
        if x.nrows() != y.len() {
            return Err(CollinError::dims("outcome length", x.nrows(), y.len()));
        }
        let x_sq = (penalty.kind == PenaltyKind::DropoutAnalytic).then(|| x.map(|v| v * v));
        Ok(LogisticObjective { x, y, x_sq, penalty })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols() + 1
    }

    pub fn penalty_spec(&self) -> &PenaltySpec {
        &self.penalty
    }

    fn probs(&self, theta: &DVector<f64>) -> DVector<f64> {
        let d = self.x.ncols();
        let z = (self.x * theta.rows(0, d)).add_scalar(theta[d]);
        z.map(sigmoid)
    }

    /// Value and gradient of the negative log-likelihood alone.
    pub fn nll_value_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let d = self.x.ncols();
        let p = self.probs(theta);
        let value = nll_from_probs(&p, self.y);
        let e = &p - self.y;
        let mut grad = DVector::zeros(d + 1);
        grad.rows_mut(0, d).copy_from(&self.x.tr_mul(&e));
        grad[d] = e.sum();
        (value, grad)
    }

    /// Value and gradient of the analytic dropout penalty.
    pub fn dropout_term(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let d = self.x.ncols();
        let kappa = self.penalty.dropout_kappa();
        let mut grad = DVector::zeros(d + 1);
        let Some(x_sq) = &self.x_sq else {
            return (0.0, grad);
        };
        let beta = theta.rows(0, d);
        let p = self.probs(theta);
        let w = p.map(|f| f * (1.0 - f));
        let dw = p.map(|f| f * (1.0 - f) * (1.0 - 2.0 * f));
        let s = x_sq * beta.map(|b| b * b);
        let value = kappa * w.dot(&s);
        let a = x_sq.tr_mul(&w);
        let sdw = s.component_mul(&dw);
        let b = self.x.tr_mul(&sdw);
        for j in 0..d {
            grad[j] = kappa * (2.0 * beta[j] * a[j] + b[j]);
        }
        grad[d] = kappa * sdw.sum();
        (value, grad)
    }

    /// Differentiable part: NLL, ℓ2 term and dropout term.
    pub fn smooth_value_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let d = self.x.ncols();
        let (mut value, mut grad) = self.nll_value_grad(theta);
        let l2 = self.penalty.l2_weight();
        if l2 > 0.0 {
            for j in 0..d {
                value += l2 * theta[j] * theta[j];
                grad[j] += 2.0 * l2 * theta[j];
            }
        }
        if self.x_sq.is_some() {
            let (v, g) = self.dropout_term(theta);
            value += v;
            grad += g;
        }
        (value, grad)
    }

    /// Per-parameter ℓ1 weights (zero for the intercept), or `None`.
    pub fn l1_weights(&self) -> Option<Vec<f64>> {
        let w = self.penalty.l1_weight();
        (w > 0.0).then(|| {
            let mut v = vec![w; self.dim()];
            v[self.dim() - 1] = 0.0;
            v
        })
    }

    /// Full objective; the ℓ1 gradient uses sign(β) with sign(0) = 0.
    pub fn value_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let d = self.x.ncols();
        let (mut value, mut grad) = self.smooth_value_grad(theta);
        let l1 = self.penalty.l1_weight();
        if l1 > 0.0 {
            for j in 0..d {
                value += l1 * theta[j].abs();
                grad[j] += l1 * sign0(theta[j]);
            }
        }
        (value, grad)
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Joint autoencoder + logistic objective. Parameters are packed as
/// `[vec(W), vec(V), γ, γ₀]` with column-major `vec`.
#[derive(Debug, Clone)]
pub struct LaeObjective<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    k: usize,
    c_lae: f64,
}

impl<'a> LaeObjective<'a> {
    pub fn new(data: &'a Dataset, k: usize, c_lae: f64) -> Result<Self> {
        let d = data.d();
        if k == 0 || k > d {
            return Err(CollinError::InvalidHyperparameter(format!(
                "k must lie in [1, {d}], got {k}"
            )));
        }
        if !(c_lae > 0.0 && c_lae.is_finite()) {
            return Err(CollinError::InvalidHyperparameter(format!(
                "c_lae must be positive, got {c_lae}"
            )));
        }
        Ok(LaeObjective { x: data.x(), y: data.y(), k, c_lae })
    }

    pub fn dim(&self) -> usize {
        2 * self.k * self.x.ncols() + self.k + 1
    }

    pub fn pack(&self, spec: &LatentSpec) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(spec.encoder_w.as_slice());
        v.extend_from_slice(spec.decoder_v.as_slice());
        v.extend_from_slice(spec.gamma.as_slice());
        v.push(spec.gamma0);
        DVector::from_vec(v)
    }

    pub fn unpack(&self, theta: &DVector<f64>) -> LatentSpec {
        let (k, d) = (self.k, self.x.ncols());
        let s = theta.as_slice();
        let kd = k * d;
        LatentSpec {
            k,
            c_lae: self.c_lae,
            encoder_w: DMatrix::from_column_slice(k, d, &s[..kd]),
            decoder_v: DMatrix::from_column_slice(d, k, &s[kd..2 * kd]),
            gamma: DVector::from_column_slice(&s[2 * kd..2 * kd + k]),
            gamma0: s[2 * kd + k],
        }
    }

    /// Returns (total, ML part, reconstruction part) and the gradient.
    pub fn evaluate(&self, theta: &DVector<f64>) -> (f64, f64, f64, DVector<f64>) {
        let spec = self.unpack(theta);
        let (w, v) = (&spec.encoder_w, &spec.decoder_v);
        let h = self.x * w.transpose();
        let p = (&h * &spec.gamma).add_scalar(spec.gamma0).map(sigmoid);
        let ml = nll_from_probs(&p, self.y);
        let e = &p - self.y;
        let r = self.x - &h * v.transpose();
        let rec = r.norm_squared();
        let scale = 1.0 / self.c_lae;

        let xte = self.x.tr_mul(&e);
        let rtx = r.tr_mul(self.x);
        let d_w = &spec.gamma * xte.transpose() - (v.tr_mul(&rtx)) * (2.0 * scale);
        let d_v = r.tr_mul(&h) * (-2.0 * scale);
        let d_gamma = h.tr_mul(&e);
        let mut g = Vec::with_capacity(self.dim());
        g.extend_from_slice(d_w.as_slice());
        g.extend_from_slice(d_v.as_slice());
        g.extend_from_slice(d_gamma.as_slice());
        g.push(e.sum());
        (ml + scale * rec, ml, rec, DVector::from_vec(g))
    }

    pub fn value_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let (v, _, _, g) = self.evaluate(theta);
        (v, g)
    }
}

/// Value and gradient of `‖X − X Wᵀ W‖²_F` with respect to the k×d encoder.
pub fn pca_loss_grad(w: &DMatrix<f64>, x: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let h = x * w.transpose();
    let r = x - &h * w;
    let rtx = r.tr_mul(x);
    let grad = (w * rtx) * -2.0 - h.tr_mul(&r) * 2.0;
    (r.norm_squared(), grad)
}

/// Relative error used by gradient checks: `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Central finite-difference gradient.
pub fn numeric_gradient<F>(f: F, theta: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(theta.len());
    let mut t = theta.clone();
    for i in 0..theta.len() {
        let orig = t[i];
        t[i] = orig + h;
        let up = f(&t);
        t[i] = orig - h;
        let down = f(&t);
        t[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}
