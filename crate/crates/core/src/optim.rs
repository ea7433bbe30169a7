//! Full-batch Adam with early stopping, plus projected, ℓ1-proximal and
//! stochastic-dropout variants.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CollinError, Result};
use crate::losses::{theta_to_model, LogisticObjective, PenaltySpec};
use crate::model::{Dataset, LinearModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_epochs: 1000,
            patience: 500,
            learning_rate: 0.1,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        OptimizerConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CollinError::InvalidHyperparameter(m));
        if self.max_epochs == 0 || self.patience == 0 {
            return bad("max_epochs and patience must be positive".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam decay rates must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    /// Parameters at the best recorded epoch.
    pub params: DVector<f64>,
    pub best_loss: f64,
    pub best_epoch: usize,
    /// Loss evaluated at the start of every epoch that ran.
    pub trace: Vec<f64>,
}

enum StepHook<'a> {
    None,
    NonNegative(&'a [usize]),
    L1Prox(&'a [f64]),
}

fn run_adam<F>(mut f: F, init: DVector<f64>, config: &OptimizerConfig, hook: StepHook) -> Result<OptimResult>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    config.validate()?;
    let n = init.len();
    let mut theta = init;
    if let StepHook::NonNegative(idx) = hook {
        for &i in idx {
            theta[i] = theta[i].max(0.0);
        }
    }
    let mut m = DVector::<f64>::zeros(n);
    let mut v = DVector::<f64>::zeros(n);
    let mut best = f64::INFINITY;
    let mut best_params = theta.clone();
    let mut best_epoch = 0;
    let mut since = 0;
    let mut trace = Vec::new();
    let (b1, b2, lr, eps) = (config.adam_beta1, config.adam_beta2, config.learning_rate, config.adam_eps);

    for epoch in 0..config.max_epochs {
        let (mut loss, grad) = f(&theta);
        if grad.len() != n {
            return Err(CollinError::dims("gradient length", n, grad.len()));
        }
        if let StepHook::L1Prox(w) = hook {
            loss += w.iter().zip(theta.iter()).map(|(w, t)| w * t.abs()).sum::<f64>();
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(CollinError::NonFinite { epoch });
        }
        trace.push(loss);
        if loss < best {
            best = loss;
            best_params.copy_from(&theta);
            best_epoch = epoch;
            since = 0;
        } else {
            since += 1;
            if since >= config.patience {
                break;
            }
        }

        let t = (epoch + 1) as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            let denom = (v[i] / c2).sqrt() + eps;
            theta[i] -= lr * (m[i] / c1) / denom;
            match hook {
                StepHook::L1Prox(w) if w[i] > 0.0 => {
                    let shrink = lr * w[i] / denom;
                    theta[i] = theta[i].signum() * (theta[i].abs() - shrink).max(0.0);
                }
                _ => {}
            }
        }
        if let StepHook::NonNegative(idx) = hook {
            for &i in idx {
                theta[i] = theta[i].max(0.0);
            }
        }
    }
    Ok(OptimResult {
        params: best_params,
        best_loss: best,
        best_epoch,
        trace,
    })
}

/// Minimizes a differentiable objective with Adam, keeping the best epoch.
pub fn minimize<F>(f: F, init: DVector<f64>, config: &OptimizerConfig) -> Result<OptimResult>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    run_adam(f, init, config, StepHook::None)
}

/// Like [`minimize`], clipping the indexed parameters at zero after every
/// update.
pub fn minimize_projected<F>(
    f: F,
    init: DVector<f64>,
    nonneg: &[usize],
    config: &OptimizerConfig,
) -> Result<OptimResult>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    if let Some(&index) = nonneg.iter().find(|&&i| i >= init.len()) {
        return Err(CollinError::IndexOutOfRange { index, len: init.len() });
    }
    run_adam(f, init, config, StepHook::NonNegative(nonneg))
}

/// Minimizes `smooth(θ) + Σ w_i |θ_i|`. The ℓ1 part is applied as a
/// soft-threshold in Adam's diagonal metric after each step, so exact
/// zeros are reachable. Reported losses include the ℓ1 term.
pub fn minimize_l1_prox<F>(
    smooth: F,
    l1_weights: &[f64],
    init: DVector<f64>,
    config: &OptimizerConfig,
) -> Result<OptimResult>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    if l1_weights.len() != init.len() {
        return Err(CollinError::dims("l1 weights", init.len(), l1_weights.len()));
    }
    if l1_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(CollinError::InvalidHyperparameter("l1 weights must be finite and >= 0".into()));
    }
    run_adam(smooth, init, config, StepHook::L1Prox(l1_weights))
}

/// State exposed to the instrumentation hook of stochastic dropout training.
#[derive(Debug)]
pub struct DropoutEpoch<'a> {
    pub epoch: usize,
    /// Which coefficients were kept this epoch.
    pub mask: &'a [bool],
    /// Coefficients used for this epoch's forward pass.
    pub effective_coefficients: &'a [f64],
    pub intercept: f64,
}

/// Inverted-dropout training of a logistic model.
pub fn minimize_dropout_stochastic(data: &Dataset, delta: f64, config: &OptimizerConfig) -> Result<LinearModel> {
    minimize_dropout_stochastic_with_hook(data, delta, config, |_| {})
}

/// [`minimize_dropout_stochastic`] with a callback invoked once per epoch.
///
/// Each epoch draws a fresh coefficient mask (keep probability `1 − δ`)
/// and trains on `mask · β / (1 − δ)`. Early stopping monitors the masked
/// training loss.
pub fn minimize_dropout_stochastic_with_hook<H>(
    data: &Dataset,
    delta: f64,
    config: &OptimizerConfig,
    mut hook: H,
) -> Result<LinearModel>
where
    H: FnMut(&DropoutEpoch),
{
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CollinError::InvalidHyperparameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let d = data.d();
    let objective = LogisticObjective::new(data, PenaltySpec::none())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let keep = 1.0 - delta;
    let mut epoch = 0;
    let mut mask = vec![true; d];
    let result = minimize(
        |theta| {
            for m in mask.iter_mut() {
                *m = rng.random_bool(keep);
            }
            let scale: Vec<f64> = mask.iter().map(|&m| if m { 1.0 / keep } else { 0.0 }).collect();
            let mut effective = theta.clone();
            for j in 0..d {
                effective[j] *= scale[j];
            }
            hook(&DropoutEpoch {
                epoch,
                mask: &mask,
                effective_coefficients: &effective.as_slice()[..d],
                intercept: theta[d],
            });
            epoch += 1;
            let (loss, mut grad) = objective.nll_value_grad(&effective);
            for j in 0..d {
                grad[j] *= scale[j];
            }
            (loss, grad)
        },
        DVector::zeros(d + 1),
        config,
    )?;
    theta_to_model(&result.params, data.feature_names().to_vec())
}
