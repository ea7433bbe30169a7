//! Validation metrics: discrimination, calibration, explained variation,
//! coefficient recovery and sign stability.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{CollinError, Result};
use crate::losses::P_CLAMP;
use crate::model::{logit, predict_risk, sigmoid, Dataset, LinearModel};

/// Threshold below which a coefficient counts as excluded.
pub const SIGN_THRESHOLD: f64 = 0.01;

pub const DEFAULT_LOWESS_FRACTION: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    pub citl: f64,
    pub cslope: f64,
    pub r2_nagelkerke: f64,
    /// Present when a ground-truth model is known.
    pub coef_mse: Option<f64>,
    /// Population-level; filled in when aggregating over replications.
    pub exjacc: Option<f64>,
    pub calibration_curve: Vec<(f64, f64)>,
}

fn check_binary(predicted: &[f64], y: &[f64]) -> Result<(usize, usize)> {
    if predicted.len() != y.len() {
        return Err(CollinError::dims("predictions", y.len(), predicted.len()));
    }
    let pos = y.iter().filter(|&&v| v == 1.0).count();
    let neg = y.iter().filter(|&&v| v == 0.0).count();
    if pos + neg != y.len() {
        return Err(CollinError::InvalidInput("outcomes must be 0 or 1".into()));
    }
    if pos == 0 || neg == 0 {
        return Err(CollinError::SingleClass { context: "metric evaluation".into() });
    }
    Ok((pos, neg))
}

/// Indices sorted by score with tie groups as half-open ranges.
fn tie_groups(scores: &[f64]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=idx.len() {
        if i == idx.len() || scores[idx[i]] != scores[idx[start]] {
            groups.push((start, i));
            start = i;
        }
    }
    (idx, groups)
}

/// Area under the ROC curve via average ranks (ties count one half).
pub fn auroc(predicted: &[f64], y: &[f64]) -> Result<f64> {
    let (pos, neg) = check_binary(predicted, y)?;
    let (idx, groups) = tie_groups(predicted);
    let mut rank_sum = 0.0;
    for (s, e) in groups {
        let avg_rank = (s + e + 1) as f64 / 2.0;
        let positives = idx[s..e].iter().filter(|&&i| y[i] == 1.0).count();
        rank_sum += avg_rank * positives as f64;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Expected AUROC of `scores` when outcome i is Bernoulli(risk_i),
/// excluding self-pairs.
pub fn expected_auroc(scores: &[f64], risk: &[f64]) -> Result<f64> {
    if scores.len() != risk.len() {
        return Err(CollinError::dims("risks", scores.len(), risk.len()));
    }
    let (idx, groups) = tie_groups(scores);
    let mut neg_below = 0.0;
    let mut num = 0.0;
    let mut self_pairs = 0.0;
    for (s, e) in groups {
        let (mut gp, mut gn, mut gself) = (0.0, 0.0, 0.0);
        for &i in &idx[s..e] {
            gp += risk[i];
            gn += 1.0 - risk[i];
            gself += risk[i] * (1.0 - risk[i]);
        }
        num += gp * neg_below + 0.5 * (gp * gn - gself);
        neg_below += gn;
        self_pairs += gself;
    }
    let total_pos: f64 = risk.iter().sum();
    let den = total_pos * neg_below - self_pairs;
    if !(den > 0.0) {
        return Err(CollinError::SingleClass { context: "expected AUROC".into() });
    }
    Ok(num / den)
}

fn clamped_logits(predicted: &[f64]) -> Vec<f64> {
    predicted.iter().map(|&p| logit(p.clamp(P_CLAMP, 1.0 - P_CLAMP))).collect()
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 100;

fn loglik(y: &[f64], eta: impl Iterator<Item = f64>) -> f64 {
    y.iter()
        .zip(eta)
        .map(|(&y, z)| {
            let p = sigmoid(z).clamp(P_CLAMP, 1.0 - P_CLAMP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum()
}

fn fit_offset_intercept(y: &[f64], offset: &[f64]) -> Result<f64> {
    let mut a = 0.0;
    for _ in 0..NEWTON_MAX_ITER {
        let (mut g, mut h) = (0.0, 0.0);
        for (&y, &o) in y.iter().zip(offset) {
            let f = sigmoid(a + o);
            g += y - f;
            h += f * (1.0 - f);
        }
        if !(h > 0.0) {
            break;
        }
        let step = g / h;
        a += step;
        if step.abs() < NEWTON_TOL {
            return Ok(a);
        }
    }
    Err(CollinError::Convergence("calibration-in-the-large fit".into()))
}

fn fit_slope(y: &[f64], lp: &[f64]) -> Result<f64> {
    let (mut a, mut b) = (0.0, 1.0);
    let ll = |a: f64, b: f64| loglik(y, lp.iter().map(|&l| a + b * l));
    let mut current = ll(a, b);
    for _ in 0..NEWTON_MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&y, &l) in y.iter().zip(lp) {
            let f = sigmoid(a + b * l);
            let w = f * (1.0 - f);
            ga += y - f;
            gb += (y - f) * l;
            haa += w;
            hab += w * l;
            hbb += w * l * l;
        }
        let det = haa * hbb - hab * hab;
        if !(det > 0.0) || !det.is_finite() {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        let mut t = 1.0;
        let mut next = ll(a + da, b + db);
        while next < current - 1e-12 * current.abs() && t > 1e-8 {
            t *= 0.5;
            next = ll(a + t * da, b + t * db);
        }
        a += t * da;
        b += t * db;
        current = next;
        if (t * da).abs().max((t * db).abs()) < NEWTON_TOL {
            return Ok(b);
        }
    }
    Err(CollinError::Convergence("calibration slope fit".into()))
}

/// Calibration intercept (logit offset fixed) and calibration slope.
pub fn calibration_intercept_slope(predicted: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_binary(predicted, y)?;
    let lp = clamped_logits(predicted);
    Ok((fit_offset_intercept(y, &lp)?, fit_slope(y, &lp)?))
}

/// Nagelkerke's R², the Cox–Snell R² divided by its maximum.
pub fn nagelkerke_r2(predicted: &[f64], y: &[f64]) -> Result<f64> {
    check_binary(predicted, y)?;
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let ll0 = loglik(y, std::iter::repeat_n(logit(ybar), y.len()));
    let ll1 = loglik(y, clamped_logits(predicted).into_iter());
    let cox_snell = 1.0 - (2.0 / n * (ll0 - ll1)).exp();
    let max = 1.0 - (2.0 / n * ll0).exp();
    Ok(cox_snell / max)
}

/// Mean squared coefficient difference, intercept excluded.
pub fn coef_mse(estimated: &LinearModel, truth: &LinearModel) -> Result<f64> {
    if estimated.d() != truth.d() {
        return Err(CollinError::dims("coefficients", truth.d(), estimated.d()));
    }
    if let Some((a, b)) = estimated
        .feature_names
        .iter()
        .zip(&truth.feature_names)
        .find(|(a, b)| a != b)
    {
        return Err(CollinError::InvalidInput(format!(
            "feature name mismatch: `{a}` vs `{b}`"
        )));
    }
    if truth.d() == 0 {
        return Ok(0.0);
    }
    let sum: f64 = estimated
        .coefficients
        .iter()
        .zip(&truth.coefficients)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(sum / truth.d() as f64)
}

/// −1, 0 or 1 with a dead zone of ±0.01 (boundaries map to 0).
pub fn sign(x: f64) -> i8 {
    if x > SIGN_THRESHOLD {
        1
    } else if x < -SIGN_THRESHOLD {
        -1
    } else {
        0
    }
}

fn jaccard(a: &[i8], b: &[i8]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&sa, &sb) in a.iter().zip(b) {
        match (sa, sb) {
            (0, 0) => {}
            _ if sa == sb => {
                inter += 1;
                union += 1;
            }
            (0, _) | (_, 0) => union += 1,
            _ => union += 2,
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean Jaccard index of coefficient sign sets over all unordered pairs.
pub fn exjacc(models: &[LinearModel]) -> Result<f64> {
    if models.len() < 2 {
        return Err(CollinError::InvalidInput(format!(
            "exjacc needs at least 2 models, got {}",
            models.len()
        )));
    }
    let d = models[0].d();
    if let Some(m) = models.iter().find(|m| m.d() != d) {
        return Err(CollinError::dims("coefficients", d, m.d()));
    }
    let signs: Vec<Vec<i8>> = models
        .iter()
        .map(|m| m.coefficients.iter().map(|&b| sign(b)).collect())
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..signs.len() {
        for j in i + 1..signs.len() {
            total += jaccard(&signs[i], &signs[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

fn tricube(u: f64) -> f64 {
    let t = 1.0 - u * u * u;
    t * t * t
}

/// Lowess fit of `y` on `x` at `x0` with bandwidth set by the `r`-th
/// nearest neighbour.
fn local_fit(x: &[f64], y: &[f64], x0: f64, r: usize, range: f64, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(x.iter().map(|&xi| (xi - x0).abs()));
    let (_, &mut h, _) = scratch.select_nth_unstable_by(r - 1, f64::total_cmp);
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    let weights: Vec<(usize, f64)> = x
        .iter()
        .enumerate()
        .filter_map(|(i, &xi)| {
            let dist = (xi - x0).abs();
            let w = if h <= 0.0 {
                (dist == 0.0) as u8 as f64
            } else if dist <= 0.001 * h {
                1.0
            } else if dist <= 0.999 * h {
                tricube(dist / h)
            } else {
                0.0
            };
            (w > 0.0).then_some((i, w))
        })
        .collect();
    for &(i, w) in &weights {
        sw += w;
        sx += w * x[i];
        sy += w * y[i];
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(i, w) in &weights {
        sxx += w * (x[i] - mx).powi(2);
        sxy += w * (x[i] - mx) * (y[i] - my);
    }
    if (sxx / sw).sqrt() > 0.001 * range {
        my + sxy / sxx * (x0 - mx)
    } else {
        my
    }
}

/// Lowess-smoothed calibration curve evaluated at the sorted unique
/// predictions. Fits are computed at anchor points at least 1% of the
/// prediction range apart and linearly interpolated in between.
pub fn lowess_curve(predicted: &[f64], y: &[f64], fraction: f64) -> Result<Vec<(f64, f64)>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CollinError::InvalidInput(format!(
            "lowess fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if predicted.len() != y.len() {
        return Err(CollinError::dims("predictions", y.len(), predicted.len()));
    }
    let n = predicted.len();
    if n < 10 {
        return Err(CollinError::InvalidInput(format!("lowess needs at least 10 points, got {n}")));
    }
    let mut xs: Vec<f64> = predicted.to_vec();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let range = xs[xs.len() - 1] - xs[0];
    let delta = 0.01 * range;
    let r = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut scratch = Vec::with_capacity(n);
    let mut fitted = vec![f64::NAN; xs.len()];
    let mut last = 0;
    fitted[0] = local_fit(predicted, y, xs[0], r, range, &mut scratch);
    while last + 1 < xs.len() {
        let cut = xs[last] + delta;
        let mut next = last + 1;
        while next < xs.len() && xs[next] <= cut {
            next += 1;
        }
        let anchor = if next == xs.len() { xs.len() - 1 } else { (next - 1).max(last + 1) };
        fitted[anchor] = local_fit(predicted, y, xs[anchor], r, range, &mut scratch);
        let (x0, y0, x1, y1) = (xs[last], fitted[last], xs[anchor], fitted[anchor]);
        for i in last + 1..anchor {
            let t = (xs[i] - x0) / (x1 - x0);
            fitted[i] = y0 + t * (y1 - y0);
        }
        last = anchor;
    }
    Ok(xs.into_iter().zip(fitted.into_iter().map(|v| v.clamp(0.0, 1.0))).collect())
}

/// Two-sided percentile interval using linear interpolation between order
/// statistics (`(n−1)q` positioning).
pub fn percentile_ci(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(CollinError::InvalidInput(format!(
            "percentile interval needs at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CollinError::InvalidInput("percentile interval over non-finite values".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CollinError::InvalidInput(format!("level must lie in (0, 1), got {level}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (v.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(v.len() - 1);
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    let tail = (1.0 - level) / 2.0;
    Ok((q(tail), q(1.0 - tail)))
}

/// Per-replication validation metrics of `model` on `validation`.
pub fn evaluate(model: &LinearModel, validation: &Dataset, truth: Option<&LinearModel>) -> Result<MetricsReport> {
    let p: DVector<f64> = predict_risk(model, validation.x())?;
    let y = validation.y().as_slice();
    let p = p.as_slice();
    let (citl, cslope) = calibration_intercept_slope(p, y)?;
    Ok(MetricsReport {
        auroc: auroc(p, y)?,
        citl,
        cslope,
        r2_nagelkerke: nagelkerke_r2(p, y)?,
        coef_mse: truth.map(|t| coef_mse(model, t)).transpose()?,
        exjacc: None,
        calibration_curve: lowess_curve(p, y, DEFAULT_LOWESS_FRACTION)?,
    })
}
