//! C ABI over `collin-core`.
//!
//! Datasets and models are opaque heap handles released with their
//! `_free` function. Every call returns a [`CollinStatus`]; on failure the
//! message is available from [`collin_last_error_message`] on the same
//! thread. Matrices are row-major `n × d` arrays of doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use collin_core::datagen::compute_vif;
use collin_core::methods::{fit, hyperparameter_space, Method, MethodSpec};
use collin_core::metrics::auroc;
use collin_core::model::{predict_risk, standardize_fit};
use collin_core::nalgebra::{DMatrix, DVector};
use collin_core::optim::OptimizerConfig;
use collin_core::tuner::tune_with;
use collin_core::{CollinError, Dataset, LinearModel, StandardizationParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollinStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    SingleClass = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

/// Opaque dataset handle.
pub struct CollinDataset {
    inner: Dataset,
}

/// Opaque fitted model: coefficients on the standardized scale plus the
/// training standardization, so predictions take raw predictors.
pub struct CollinModel {
    model: LinearModel,
    params: StandardizationParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &CollinError) -> CollinStatus {
    match e {
        CollinError::DimensionMismatch { .. } => CollinStatus::DimensionMismatch,
        CollinError::SingleClass { .. } => CollinStatus::SingleClass,
        CollinError::NonFinite { .. }
        | CollinError::NotPsd { .. }
        | CollinError::ScaleTooLarge { .. }
        | CollinError::Unattainable(_)
        | CollinError::Convergence(_)
        | CollinError::AllTrialsFailed(_)
        | CollinError::TooManyFailures { .. } => CollinStatus::Numerical,
        CollinError::Io(_) | CollinError::Csv(_) | CollinError::Json(_) | CollinError::Parse { .. } => CollinStatus::Io,
        _ => CollinStatus::InvalidArgument,
    }
}

struct Fail(CollinStatus, String);

impl From<CollinError> for Fail {
    fn from(e: CollinError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CollinStatus::NullPointer, format!("{what} is null"))
}

fn guard<F>(f: F) -> CollinStatus
where
    F: FnOnce() -> Result<(), Fail>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CollinStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            CollinStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CollinStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn matrix(x: *const f64, n: usize, d: usize) -> Result<DMatrix<f64>, Fail> {
    let len = n.checked_mul(d).ok_or_else(|| Fail(CollinStatus::InvalidArgument, "n * d overflows".into()))?;
    Ok(DMatrix::from_row_slice(n, d, slice(x, len, "x")?))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next `collin_*` call on the same thread.
#[no_mangle]
pub extern "C" fn collin_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a dataset from row-major predictors `x` (`n × d`) and 0/1
/// outcomes `y` (`n`). Feature names are `x0..x{d-1}`.
///
/// # Safety
/// `x` must point to `n * d` doubles, `y` to `n` doubles, `out` to writable memory.
#[no_mangle]
pub unsafe extern "C" fn collin_dataset_new(
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut CollinDataset,
) -> CollinStatus {
    guard(|| {
        let x = matrix(x, n, d)?;
        let y = DVector::from_column_slice(slice(y, n, "y")?);
        write_out(out, CollinDataset { inner: Dataset::unnamed(x, y)? })
    })
}

/// Loads a dataset from CSV (predictor columns then `outcome`). `dose_path`
/// may be null.
///
/// # Safety
/// `path` (and `dose_path` when non-null) must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn collin_dataset_from_csv(
    path: *const c_char,
    dose_path: *const c_char,
    out: *mut *mut CollinDataset,
) -> CollinStatus {
    guard(|| {
        let path = string(path, "path")?;
        let dose = if dose_path.is_null() { None } else { Some(string(dose_path, "dose_path")?) };
        let ds = Dataset::from_csv(Path::new(path), dose.map(Path::new))?;
        write_out(out, CollinDataset { inner: ds })
    })
}

/// Marks predictors as dose columns (nonzero byte = dose) for LR_NN.
///
/// # Safety
/// `dataset` must be a live handle and `mask` must point to `d` bytes.
#[no_mangle]
pub unsafe extern "C" fn collin_dataset_set_dose_mask(dataset: *mut CollinDataset, mask: *const u8, d: usize) -> CollinStatus {
    guard(|| {
        let ds = dataset.as_mut().ok_or_else(|| null("dataset"))?;
        let mask: Vec<bool> = slice(mask, d, "mask")?.iter().map(|&b| b != 0).collect();
        ds.inner = ds.inner.clone().with_dose_mask(mask)?;
        Ok(())
    })
}

/// # Safety
/// `dataset` must be a live handle; `n` and `d` writable.
#[no_mangle]
pub unsafe extern "C" fn collin_dataset_shape(dataset: *const CollinDataset, n: *mut usize, d: *mut usize) -> CollinStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if n.is_null() || d.is_null() {
            return Err(null("n or d"));
        }
        *n = ds.inner.n();
        *d = ds.inner.d();
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn collin_dataset_free(dataset: *mut CollinDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

fn method_spec(method: &str, d: usize, hyper: &[f64]) -> Result<MethodSpec, Fail> {
    let method: Method = method.parse()?;
    if hyper.is_empty() {
        Ok(MethodSpec::default_for(method, d))
    } else {
        Ok(MethodSpec::from_values(method, d, hyper)?)
    }
}

/// Standardizes the dataset and fits `method` ("LR", "Lasso", "Ridge",
/// "ElasticNet", "Dropout", "PCLR", "LAELR", "LR_NN"). `hyper` holds the
/// method's hyperparameters in search-space order (c_l1; c_l2; c_l1, c_l2;
/// delta; k; k, c_lae); pass `n_hyper = 0` for defaults.
///
/// # Safety
/// Pointers must be valid; `hyper` must hold `n_hyper` doubles.
#[no_mangle]
pub unsafe extern "C" fn collin_fit(
    dataset: *const CollinDataset,
    method: *const c_char,
    hyper: *const f64,
    n_hyper: usize,
    seed: u64,
    out: *mut *mut CollinModel,
) -> CollinStatus {
    guard(|| {
        let ds = &dataset.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let spec = method_spec(string(method, "method")?, ds.d(), slice(hyper, n_hyper, "hyper")?)?;
        let params = standardize_fit(ds.x(), Some(ds.feature_names()))?;
        let model = fit(&spec, &params.apply_dataset(ds)?, &OptimizerConfig::default().with_seed(seed))?;
        write_out(out, CollinModel { model, params })
    })
}

/// Like [`collin_fit`], but tunes the hyperparameters by cross-validated
/// log-likelihood first.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn collin_tune_fit(
    dataset: *const CollinDataset,
    method: *const c_char,
    seed: u64,
    out: *mut *mut CollinModel,
) -> CollinStatus {
    guard(|| {
        let ds = &dataset.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let spec = method_spec(string(method, "method")?, ds.d(), &[])?;
        let params = standardize_fit(ds.x(), Some(ds.feature_names()))?;
        let z = params.apply_dataset(ds)?;
        let config = OptimizerConfig::default().with_seed(seed);
        let tuned = tune_with(&spec, &z, seed, &config)?;
        let model = fit(&tuned.best_spec, &z, &config)?;
        write_out(out, CollinModel { model, params })
    })
}

/// Number of hyperparameters `method` takes for `d` predictors.
///
/// # Safety
/// `method` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn collin_method_n_hyper(method: *const c_char, d: usize, out: *mut usize) -> CollinStatus {
    guard(|| {
        let m: Method = string(method, "method")?.parse()?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = hyperparameter_space(m, d).len();
        Ok(())
    })
}

/// Predicted risks for raw row-major predictors `x` (`n × d`) into `out` (`n`).
///
/// # Safety
/// `x` must hold `n * d` doubles and `out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn collin_model_predict(
    model: *const CollinModel,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> CollinStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let z = m.params.apply(&matrix(x, n, d)?)?;
        let p = predict_risk(&m.model, &z)?;
        if n > 0 && out.is_null() {
            return Err(null("out"));
        }
        for (i, v) in p.iter().enumerate() {
            *out.add(i) = *v;
        }
        Ok(())
    })
}

/// Standardized-scale coefficients (`d` values) and intercept. `raw_scale`
/// nonzero converts them to the original predictor units.
///
/// # Safety
/// `coefficients` must have room for `d` doubles; `intercept` writable.
#[no_mangle]
pub unsafe extern "C" fn collin_model_coefficients(
    model: *const CollinModel,
    raw_scale: u8,
    coefficients: *mut f64,
    d: usize,
    intercept: *mut f64,
) -> CollinStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let lm = if raw_scale != 0 { m.params.to_raw_scale(&m.model) } else { m.model.clone() };
        if d != lm.d() {
            return Err(CollinError::dims("coefficient buffer", lm.d(), d).into());
        }
        if (d > 0 && coefficients.is_null()) || intercept.is_null() {
            return Err(null("coefficients or intercept"));
        }
        ptr::copy_nonoverlapping(lm.coefficients.as_ptr(), coefficients, d);
        *intercept = lm.intercept;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn collin_model_free(model: *mut CollinModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Area under the ROC curve of `predicted` against 0/1 `y`.
///
/// # Safety
/// Both arrays must hold `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn collin_auroc(predicted: *const f64, y: *const f64, n: usize, out: *mut f64) -> CollinStatus {
    guard(|| {
        let v = auroc(slice(predicted, n, "predicted")?, slice(y, n, "y")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = v;
        Ok(())
    })
}

/// Median variance inflation factor of a `d × d` row-major correlation matrix.
///
/// # Safety
/// `corr` must hold `d * d` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn collin_median_vif(corr: *const f64, d: usize, out: *mut f64) -> CollinStatus {
    guard(|| {
        let m = matrix(corr, d, d)?;
        let v = compute_vif(&m)?.median;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = v;
        Ok(())
    })
}
