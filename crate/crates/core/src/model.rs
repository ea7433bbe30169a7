//! Core data types shared by every estimator: the dataset, the fitted linear
//! risk model, and predictor standardization.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CollinError, Result};

/// Name of the outcome column in dataset CSV files.
pub const OUTCOME_COLUMN: &str = "outcome";

/// Standard logistic function, evaluated without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`].
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Returns true for organ-at-risk dose predictor names such as `Subm.L.Dm`
/// or `PCM.Sup.V30`.
pub fn is_dose_name(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or("");
    if last == "Dm" {
        return true;
    }
    let mut chars = last.chars();
    chars.next() == Some('V') && last.len() > 1 && chars.all(|c| c.is_ascii_digit())
}

/// Predictor matrix (observations as rows) with a binary outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    feature_names: Vec<String>,
    dose_mask: Vec<bool>,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        feature_names: Vec<String>,
        dose_mask: Vec<bool>,
    ) -> Result<Self> {
        let d = x.ncols();
        if x.nrows() != y.len() {
            return Err(CollinError::dims("outcome length", x.nrows(), y.len()));
        }
        if feature_names.len() != d {
            return Err(CollinError::dims("feature names", d, feature_names.len()));
        }
        if dose_mask.len() != d {
            return Err(CollinError::dims("dose mask", d, dose_mask.len()));
        }
        if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(CollinError::InvalidInput(format!(
                "outcome values must be 0 or 1, found {v}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CollinError::InvalidInput(
                "predictor matrix contains non-finite values".into(),
            ));
        }
        Ok(Dataset {
            x,
            y,
            feature_names,
            dose_mask,
        })
    }

    /// Builds a dataset with default names `x0..x{d-1}` and no dose predictors.
    pub fn unnamed(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let d = x.ncols();
        let names = (0..d).map(|j| format!("x{j}")).collect();
        Self::new(x, y, names, vec![false; d])
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn dose_mask(&self) -> &[bool] {
        &self.dose_mask
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn prevalence(&self) -> f64 {
        self.y.mean()
    }

    pub fn has_both_classes(&self) -> bool {
        let events = self.y.sum();
        events > 0.0 && events < self.n() as f64
    }

    /// Indices of coefficients flagged as dose predictors.
    pub fn dose_indices(&self) -> Vec<usize> {
        self.dose_mask
            .iter()
            .enumerate()
            .filter_map(|(j, &m)| m.then_some(j))
            .collect()
    }

    pub fn with_dose_mask(mut self, dose_mask: Vec<bool>) -> Result<Self> {
        if dose_mask.len() != self.d() {
            return Err(CollinError::dims("dose mask", self.d(), dose_mask.len()));
        }
        self.dose_mask = dose_mask;
        Ok(self)
    }

    /// Replaces the predictor matrix, keeping outcome, names and mask.
    pub fn with_x(&self, x: DMatrix<f64>) -> Result<Self> {
        Self::new(
            x,
            self.y.clone(),
            self.feature_names.clone(),
            self.dose_mask.clone(),
        )
    }

    /// Rows in the given order (indices may repeat).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let d = self.d();
        let x = DMatrix::from_fn(rows.len(), d, |i, j| self.x[(rows[i], j)]);
        let y = DVector::from_fn(rows.len(), |i, _| self.y[rows[i]]);
        Dataset {
            x,
            y,
            feature_names: self.feature_names.clone(),
            dose_mask: self.dose_mask.clone(),
        }
    }

    /// Loads `path` (header = feature names then `outcome`). When given,
    /// `dose_path` lists dose predictor names one per line.
    pub fn from_csv(path: &Path, dose_path: Option<&Path>) -> Result<Self> {
        let parse_err = |message: String| CollinError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        match header.last() {
            Some(last) if last == OUTCOME_COLUMN => {}
            _ => return Err(parse_err(format!("last column must be `{OUTCOME_COLUMN}`"))),
        }
        let names = header[..header.len() - 1].to_vec();
        let d = names.len();
        let mut values = Vec::new();
        let mut outcome = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != d + 1 {
                return Err(parse_err(format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    record.len(),
                    d + 1
                )));
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(format!("row {}: cannot parse `{field}`", line + 2)))?;
                if j < d {
                    values.push(v);
                } else {
                    outcome.push(v);
                }
            }
        }
        let n = outcome.len();
        let x = DMatrix::from_row_slice(n, d, &values);
        let y = DVector::from_vec(outcome);
        let mask = match dose_path {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                let dose: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
                if let Some(unknown) = dose.iter().find(|name| !names.iter().any(|n| n == *name)) {
                    return Err(CollinError::Parse {
                        path: p.to_path_buf(),
                        message: format!("unknown dose predictor `{unknown}`"),
                    });
                }
                names.iter().map(|n| dose.contains(&n.as_str())).collect()
            }
            None => vec![false; d],
        };
        Dataset::new(x, y, names, mask)
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(OUTCOME_COLUMN);
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row: Vec<String> = (0..self.d()).map(|j| self.x[(i, j)].to_string()).collect();
            row.push((self.y[i] as u8).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column means and population standard deviations of a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl StandardizationParams {
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.means.len() {
            return Err(CollinError::dims("standardization columns", self.means.len(), x.ncols()));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.means[j]) / self.sds[j]
        }))
    }

    pub fn unapply(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.means.len() {
            return Err(CollinError::dims("standardization columns", self.means.len(), z.ncols()));
        }
        Ok(DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
            z[(i, j)] * self.sds[j] + self.means[j]
        }))
    }

    pub fn apply_dataset(&self, data: &Dataset) -> Result<Dataset> {
        data.with_x(self.apply(data.x())?)
    }

    /// Rewrites a model fitted on standardized predictors so that it gives
    /// identical predictions on the raw scale.
    pub fn to_raw_scale(&self, model: &LinearModel) -> LinearModel {
        let coefficients: Vec<f64> = model
            .coefficients
            .iter()
            .zip(&self.sds)
            .map(|(b, s)| b / s)
            .collect();
        let shift: f64 = coefficients.iter().zip(&self.means).map(|(b, m)| b * m).sum();
        LinearModel {
            intercept: model.intercept - shift,
            coefficients,
            feature_names: model.feature_names.clone(),
        }
    }
}

/// Fits column means and population (divide-by-n) standard deviations.
pub fn standardize_fit(x: &DMatrix<f64>, names: Option<&[String]>) -> Result<StandardizationParams> {
    let n = x.nrows();
    if n < 2 {
        return Err(CollinError::InvalidInput(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    let mut means = Vec::with_capacity(x.ncols());
    let mut sds = Vec::with_capacity(x.ncols());
    for (j, col) in x.column_iter().enumerate() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            let column = names
                .and_then(|ns| ns.get(j).cloned())
                .unwrap_or_else(|| format!("column {j}"));
            return Err(CollinError::ConstantColumn { column });
        }
        means.push(mean);
        sds.push(sd);
    }
    Ok(StandardizationParams { means, sds })
}

/// Intercept plus one coefficient per named predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl LinearModel {
    pub fn new(intercept: f64, coefficients: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        if coefficients.len() != feature_names.len() {
            return Err(CollinError::dims(
                "coefficients",
                feature_names.len(),
                coefficients.len(),
            ));
        }
        if !intercept.is_finite() || coefficients.iter().any(|b| !b.is_finite()) {
            return Err(CollinError::InvalidInput("model values must be finite".into()));
        }
        Ok(LinearModel {
            intercept,
            coefficients,
            feature_names,
        })
    }

    pub fn zeros(feature_names: Vec<String>) -> Self {
        LinearModel {
            intercept: 0.0,
            coefficients: vec![0.0; feature_names.len()],
            feature_names,
        }
    }

    pub fn d(&self) -> usize {
        self.coefficients.len()
    }

    /// Linear predictor `x·β + β₀` for every row.
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.d() {
            return Err(CollinError::dims("predictor columns", self.d(), x.ncols()));
        }
        let beta = DVector::from_column_slice(&self.coefficients);
        Ok((x * beta).add_scalar(self.intercept))
    }
}

/// Predicted risk `sigmoid(x·β + β₀)` per row of `x`.
pub fn predict_risk(model: &LinearModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(model.linear_predictor(x)?.map(sigmoid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_reference_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((1.0 - sigmoid(50.0)).abs() < 1e-12);
        assert_abs_diff_eq!(sigmoid(3f64.ln()), 0.75, epsilon = 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    proptest! {
        #[test]
        fn sigmoid_bounded_and_symmetric(z in -30.0f64..30.0) {
            let p = sigmoid(z);
            prop_assert!(p > 0.0 && p < 1.0);
            prop_assert!((p + sigmoid(-z) - 1.0).abs() < 1e-15);
            prop_assert!(sigmoid(z + 1e-3) >= p);
            if z.abs() < 15.0 {
                prop_assert!(sigmoid(z + 1e-3) > p);
            }
        }
    }

    #[test]
    fn predict_risk_examples() {
        let names = vec!["a".to_string(), "b".to_string()];
        let zero = LinearModel::zeros(names);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -3.0, 0.5, 7.0, 7.0]);
        let p = predict_risk(&zero, &x).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));

        let m = LinearModel::new(0.0, vec![1.0], vec!["x".into()]).unwrap();
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 3f64.ln(), 3f64.ln()]);
        let p = predict_risk(&m, &x).unwrap();
        assert_eq!(p[0], 0.5);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-15);
        assert_eq!(p[1], p[2]);
    }

    #[test]
    fn predict_risk_dimension_error_names_sizes() {
        let m = LinearModel::zeros(vec!["a".into(), "b".into()]);
        let err = predict_risk(&m, &DMatrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 2") && msg.contains("got 3"), "{msg}");
    }

    #[test]
    fn standardize_two_points_and_constant() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        let p = standardize_fit(&x, None).unwrap();
        assert_eq!(p.means, vec![2.0]);
        assert_eq!(p.sds, vec![1.0]);

        let c = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 0.0]);
        let names = vec!["dose".to_string()];
        match standardize_fit(&c, Some(&names)) {
            Err(CollinError::ConstantColumn { column }) => assert_eq!(column, "dose"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn standardize_is_idempotent_on_standardized_data() {
        let x = DMatrix::from_fn(50, 3, |i, j| ((i * 7 + j * 13) % 11) as f64 + j as f64);
        let p = standardize_fit(&x, None).unwrap();
        let z = p.apply(&x).unwrap();
        let q = standardize_fit(&z, None).unwrap();
        for j in 0..3 {
            assert!(q.means[j].abs() < 1e-10);
            assert!((q.sds[j] - 1.0).abs() < 1e-10);
        }
        let back = p.unapply(&z).unwrap();
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    fn matrix_strategy() -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>, f64)> {
        (2usize..5, 3usize..20).prop_flat_map(|(d, n)| {
            (
                proptest::collection::vec(-5.0f64..5.0, n * d),
                proptest::collection::vec(-2.0f64..2.0, d),
                -2.0f64..2.0,
            )
                .prop_map(move |(v, b, b0)| (DMatrix::from_row_slice(n, d, &v), b, b0))
        })
    }

    proptest! {
        #[test]
        fn prediction_invariant_under_standardization((x, beta, b0) in matrix_strategy()) {
            prop_assume!(standardize_fit(&x, None).is_ok());
            let params = standardize_fit(&x, None).unwrap();
            let names: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
            let std_model = LinearModel::new(b0, beta, names).unwrap();
            let z = params.apply(&x).unwrap();
            let raw_model = params.to_raw_scale(&std_model);
            let p_std = predict_risk(&std_model, &z).unwrap();
            let p_raw = predict_risk(&raw_model, &x).unwrap();
            for (a, b) in p_std.iter().zip(p_raw.iter()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            let zp = standardize_fit(&z, None).unwrap();
            prop_assert!(zp.means.iter().all(|m| m.abs() < 1e-10));
        }
    }

    #[test]
    fn dataset_validation() {
        let x = DMatrix::zeros(2, 1);
        assert!(Dataset::unnamed(x.clone(), DVector::from_vec(vec![0.0, 2.0])).is_err());
        assert!(Dataset::unnamed(x.clone(), DVector::from_vec(vec![0.0])).is_err());
        let mut bad = x.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(Dataset::unnamed(bad, DVector::from_vec(vec![0.0, 1.0])).is_err());
        assert!(Dataset::new(x, DVector::from_vec(vec![0.0, 1.0]), vec![], vec![]).is_err());
    }

    #[test]
    fn dose_names() {
        for n in ["Subm.L.Dm", "PCM.Sup.V10", "OralCavity.Ext.V50"] {
            assert!(is_dose_name(n), "{n}");
        }
        for n in ["AGE", "XER.BSL.1", "DYSFAGIE.BSL.2", "V"] {
            assert!(!is_dose_name(n), "{n}");
        }
    }

    #[test]
    fn csv_roundtrip_with_dose_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let data_path = dir.path().join("d.csv");
        std::fs::write(&data_path, "age,Subm.L.Dm,outcome\n60,20.5,1\n55,10,0\n70,30,1\n").unwrap();
        let dose_path = dir.path().join("dose.txt");
        std::fs::write(&dose_path, "Subm.L.Dm\n").unwrap();
        let ds = Dataset::from_csv(&data_path, Some(&dose_path)).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.dose_mask(), &[false, true]);
        assert_eq!(ds.x()[(0, 1)], 20.5);

        let out = dir.path().join("o.csv");
        ds.to_csv(&out).unwrap();
        let again = Dataset::from_csv(&out, Some(&dose_path)).unwrap();
        assert_eq!(again, ds);

        std::fs::write(&dose_path, "Nope\n").unwrap();
        assert!(Dataset::from_csv(&data_path, Some(&dose_path)).is_err());
        std::fs::write(&data_path, "a,b\n1,0\n").unwrap();
        assert!(Dataset::from_csv(&data_path, None).is_err());
    }
}
