use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CollinError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CollinError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("column `{column}` is constant and cannot be standardized")]
    ConstantColumn { column: String },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite loss or gradient at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("index {index} out of range for {len} parameters")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("outcome has a single class ({context})")]
    SingleClass { context: String },
    #[error("covariance is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error(
        "eigenvalue clipping moved the diagonal by {deviation:e} at scale {scale}; use a smaller scale factor"
    )]
    ScaleTooLarge { scale: f64, deviation: f64 },
    #[error("unattainable target: {0}")]
    Unattainable(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("all tuning trials failed: {0}")]
    AllTrialsFailed(String),
    #[error("{failed} of {total} replications failed (limit is 10%); first error: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CollinError {
    pub fn dims(what: &'static str, expected: usize, actual: usize) -> Self {
        CollinError::DimensionMismatch {
            what,
            expected,
            actual,
        }
    }
}
