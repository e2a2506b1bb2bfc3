//! C interface to the pmls estimators.
//!
//! Datasets and fits are opaque handles owned by the caller and released
//! with their `_free` function. Every fallible call returns a status code;
//! on failure the message is available from [`pmls_last_error`] on the
//! same thread. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};
use pmls::evaluation::{predict, PredictMode};
use pmls::model::validate_dataset;
use pmls::pipeline::{fit_pipeline, Pipeline, PipelineOptions};
use pmls::simulation::diagnostic::order_statistic_diagnostic;
use pmls::{Dataset, FitResult, PmlsError, TuningParams};

pub const PMLS_OK: i32 = 0;
/// A required pointer was null or a buffer length was wrong.
pub const PMLS_ERR_ARGUMENT: i32 = 1;
pub const PMLS_ERR_CONFIG: i32 = 2;
/// Invalid data: non-finite values, too few rows, mismatched sizes.
pub const PMLS_ERR_DATA: i32 = 3;
/// Rank deficiency or a solver failure.
pub const PMLS_ERR_NUMERICAL: i32 = 4;
/// The requested quantity was not estimated by this fit.
pub const PMLS_ERR_ABSENT: i32 = 5;
/// A Rust panic was caught at the boundary.
pub const PMLS_ERR_PANIC: i32 = 6;

pub const PMLS_PIPELINE_PMLS_FULL: i32 = 0;
pub const PMLS_PIPELINE_IMPROVED: i32 = 1;
pub const PMLS_PIPELINE_BETA_ZERO: i32 = 2;
pub const PMLS_PIPELINE_OLS_ONLY: i32 = 3;

pub const PMLS_PREDICT_LS: i32 = 0;
pub const PMLS_PREDICT_MAX: i32 = 1;
pub const PMLS_PREDICT_MID: i32 = 2;

/// Validated covariates and responses.
pub struct PmlsDataset {
    inner: Dataset,
}

/// Result of a fit.
pub struct PmlsFit {
    inner: FitResult,
}

/// Fit settings. A NaN `lambda` or `lambda_tilde` and a zero `n_lambda`
/// or `n_lambda_tilde` mean "choose by cross-validation".
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PmlsFitOptions {
    pub pipeline: i32,
    pub lambda: f64,
    pub n_lambda: usize,
    pub lambda_tilde: f64,
    pub n_lambda_tilde: usize,
    pub lambda1: f64,
    pub epsilon: f64,
    pub signed_penalty: bool,
    pub cv_seed: u64,
    pub cv_folds: usize,
    /// Also estimate the lower expectation, needed for `mid` predictions.
    pub lower: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PmlsDiagnostic {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub bound: f64,
    pub asymptotic: f64,
    pub monte_carlo: f64,
    pub monte_carlo_se: f64,
    pub trials: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

enum Failure {
    Argument(&'static str),
    Absent(&'static str),
    Pmls(PmlsError),
}

impl From<PmlsError> for Failure {
    fn from(e: PmlsError) -> Self {
        Failure::Pmls(e)
    }
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status(e: &PmlsError) -> i32 {
    match e {
        PmlsError::MissingLowerExpectation => PMLS_ERR_ABSENT,
        other => match other.exit_code() {
            2 => PMLS_ERR_CONFIG,
            3 => PMLS_ERR_DATA,
            _ => PMLS_ERR_NUMERICAL,
        },
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PMLS_OK,
        Ok(Err(Failure::Argument(what))) => {
            set_error(format!("invalid argument: {what}"));
            PMLS_ERR_ARGUMENT
        }
        Ok(Err(Failure::Absent(what))) => {
            set_error(format!("fit has no {what}"));
            PMLS_ERR_ABSENT
        }
        Ok(Err(Failure::Pmls(e))) => {
            set_error(e.to_string());
            status(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            PMLS_ERR_PANIC
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Argument(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(
    p: *mut T,
    len: usize,
    what: &'static str,
) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Argument(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Argument(what))
}

unsafe fn write<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Argument(what));
    }
    out.write(value);
    Ok(())
}

fn copy_into(dst: &mut [f64], src: &[f64]) -> Result<(), Failure> {
    if dst.len() != src.len() {
        return Err(Failure::Argument("buffer length"));
    }
    dst.copy_from_slice(src);
    Ok(())
}

fn matrix(x: &[f64], n_rows: usize, n_cols: usize) -> Result<DMatrix<f64>, Failure> {
    match n_rows.checked_mul(n_cols) {
        Some(len) if len == x.len() => Ok(DMatrix::from_row_slice(n_rows, n_cols, x)),
        _ => Err(Failure::Argument("matrix size")),
    }
}

fn pipeline(code: i32) -> Result<Pipeline, Failure> {
    match code {
        PMLS_PIPELINE_PMLS_FULL => Ok(Pipeline::PmlsFull),
        PMLS_PIPELINE_IMPROVED => Ok(Pipeline::Improved),
        PMLS_PIPELINE_BETA_ZERO => Ok(Pipeline::BetaZero),
        PMLS_PIPELINE_OLS_ONLY => Ok(Pipeline::OlsOnly),
        other => Err(PmlsError::InvalidConfig(format!("unknown pipeline code {other}")).into()),
    }
}

fn predict_mode(code: i32) -> Result<PredictMode, Failure> {
    match code {
        PMLS_PREDICT_LS => Ok(PredictMode::Ls),
        PMLS_PREDICT_MAX => Ok(PredictMode::Max),
        PMLS_PREDICT_MID => Ok(PredictMode::Mid),
        other => Err(PmlsError::InvalidConfig(format!("unknown prediction mode {other}")).into()),
    }
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn pmls_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn pmls_fit_options_default() -> PmlsFitOptions {
    let t = TuningParams::default();
    let o = PipelineOptions::default();
    PmlsFitOptions {
        pipeline: PMLS_PIPELINE_PMLS_FULL,
        lambda: f64::NAN,
        n_lambda: 0,
        lambda_tilde: f64::NAN,
        n_lambda_tilde: 0,
        lambda1: t.lambda1,
        epsilon: t.epsilon,
        signed_penalty: t.signed_penalty,
        cv_seed: o.cv_seed,
        cv_folds: o.cv_folds,
        lower: o.lower,
    }
}

/// Copies an `n_rows x n_cols` row-major matrix and a response of length
/// `n_rows` into a validated dataset.
///
/// # Safety
/// `x` and `y` must point to that many readable doubles and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pmls_dataset_new(
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    y: *const f64,
    out: *mut *mut PmlsDataset,
) -> i32 {
    guard(|| {
        let xs = slice(x, n_rows.saturating_mul(n_cols), "x")?;
        let ys = slice(y, n_rows, "y")?;
        let ds = validate_dataset(matrix(xs, n_rows, n_cols)?, DVector::from_column_slice(ys))?;
        write(
            out,
            Box::into_raw(Box::new(PmlsDataset { inner: ds })),
            "out",
        )
    })
}

/// # Safety
/// `ds` must be null or a handle from [`pmls_dataset_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pmls_dataset_free(ds: *mut PmlsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits the selected pipeline.
///
/// # Safety
/// `ds` must be a live dataset handle, `options` null (defaults) or
/// readable, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit(
    ds: *const PmlsDataset,
    options: *const PmlsFitOptions,
    out: *mut *mut PmlsFit,
) -> i32 {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let o = options
            .as_ref()
            .copied()
            .unwrap_or_else(|| pmls_fit_options_default());
        let tuning = TuningParams {
            lambda: (!o.lambda.is_nan()).then_some(o.lambda),
            n_lambda: (o.n_lambda > 0).then_some(o.n_lambda),
            lambda_tilde: (!o.lambda_tilde.is_nan()).then_some(o.lambda_tilde),
            n_lambda_tilde: (o.n_lambda_tilde > 0).then_some(o.n_lambda_tilde),
            lambda1: o.lambda1,
            epsilon: o.epsilon,
            signed_penalty: o.signed_penalty,
        };
        let opts = PipelineOptions {
            pipeline: pipeline(o.pipeline)?,
            cv_seed: o.cv_seed,
            cv_folds: o.cv_folds,
            lower: o.lower,
        };
        let fit = fit_pipeline(&ds.inner, &tuning, &opts)?;
        write(out, Box::into_raw(Box::new(PmlsFit { inner: fit })), "out")
    })
}

/// # Safety
/// `fit` must be null or a fit handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit_free(fit: *mut PmlsFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of coefficients, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit_n_cols(fit: *const PmlsFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.beta.len())
}

/// Number of estimation rows, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit_n_rows(fit: *const PmlsFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.residuals.len())
}

/// Copies the coefficients into `out`, which must hold exactly
/// [`pmls_fit_n_cols`] values.
///
/// # Safety
/// `fit` must be a live fit handle and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit_beta(fit: *const PmlsFit, out: *mut f64, len: usize) -> i32 {
    guard(|| copy_into(slice_mut(out, len, "out")?, &handle(fit, "fit")?.inner.beta))
}

/// Copies `Y_i - beta^T X_i - mu_upper` into `out`, which must hold
/// exactly [`pmls_fit_n_rows`] values.
///
/// # Safety
/// `fit` must be a live fit handle and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit_residuals(fit: *const PmlsFit, out: *mut f64, len: usize) -> i32 {
    guard(|| {
        copy_into(
            slice_mut(out, len, "out")?,
            &handle(fit, "fit")?.inner.residuals,
        )
    })
}

/// Second-step estimate of the upper expectation.
///
/// # Safety
/// `fit` must be a live fit handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit_mu_upper(fit: *const PmlsFit, out: *mut f64) -> i32 {
    guard(|| write(out, handle(fit, "fit")?.inner.mu_upper, "out"))
}

/// First-step intercept; `PMLS_ERR_ABSENT` for pipelines without one.
///
/// # Safety
/// `fit` must be a live fit handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit_mu_star(fit: *const PmlsFit, out: *mut f64) -> i32 {
    guard(|| {
        let v = handle(fit, "fit")?.inner.mu_star;
        write(
            out,
            v.ok_or(Failure::Absent("first-step intercept"))?,
            "out",
        )
    })
}

/// Lower expectation; `PMLS_ERR_ABSENT` unless the fit estimated it.
///
/// # Safety
/// `fit` must be a live fit handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit_mu_lower(fit: *const PmlsFit, out: *mut f64) -> i32 {
    guard(|| {
        let v = handle(fit, "fit")?.inner.mu_lower;
        write(out, v.ok_or(Failure::Absent("lower expectation"))?, "out")
    })
}

/// Plug-in variance of the upper expectation estimate.
///
/// # Safety
/// `fit` must be a live fit handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit_var_mu_upper(fit: *const PmlsFit, out: *mut f64) -> i32 {
    guard(|| write(out, handle(fit, "fit")?.inner.var_mu_upper, "out"))
}

/// Selection sizes of the first and second step.
///
/// # Safety
/// `fit` must be a live fit handle; `first` and `second` writable.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit_n_selected(
    fit: *const PmlsFit,
    first: *mut usize,
    second: *mut usize,
) -> i32 {
    guard(|| {
        let f = &handle(fit, "fit")?.inner;
        write(first, f.n_selected, "first")?;
        write(second, f.n_selected_second, "second")
    })
}

/// Serializes the fit as JSON. Release the string with
/// [`pmls_string_free`].
///
/// # Safety
/// `fit` must be a live fit handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit_to_json(fit: *const PmlsFit, out: *mut *mut c_char) -> i32 {
    guard(|| {
        let json = serde_json::to_string(&handle(fit, "fit")?.inner)
            .map_err(|e| PmlsError::Numerical(e.to_string()))?;
        let s = CString::new(json).map_err(|_| Failure::Argument("json"))?;
        write(out, s.into_raw(), "out")
    })
}

/// Restores a fit from [`pmls_fit_to_json`] output.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pmls_fit_from_json(json: *const c_char, out: *mut *mut PmlsFit) -> i32 {
    guard(|| {
        if json.is_null() {
            return Err(Failure::Argument("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| PmlsError::SchemaMismatch("fit JSON is not UTF-8".into()))?;
        let fit: FitResult = serde_json::from_str(text)
            .map_err(|e| PmlsError::SchemaMismatch(format!("fit JSON: {e}")))?;
        write(out, Box::into_raw(Box::new(PmlsFit { inner: fit })), "out")
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pmls_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Predicts at `n_rows` new covariate rows into `out` (length `n_rows`).
///
/// # Safety
/// `fit` must be a live fit handle, `x` readable for `n_rows * n_cols`
/// doubles and `out` writable for `n_rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn pmls_predict(
    fit: *const PmlsFit,
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    mode: i32,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let fit = handle(fit, "fit")?;
        let x0 = matrix(
            slice(x, n_rows.saturating_mul(n_cols), "x")?,
            n_rows,
            n_cols,
        )?;
        let y_hat = predict(&fit.inner, &x0, predict_mode(mode)?)?;
        copy_into(slice_mut(out, n_rows, "out")?, &y_hat)
    })
}

/// Order-statistic bound with a seeded Monte-Carlo check.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmls_diagnostic(
    n: usize,
    m: usize,
    trials: usize,
    seed: u64,
    out: *mut PmlsDiagnostic,
) -> i32 {
    guard(|| {
        let d = order_statistic_diagnostic(n, m, trials, seed)?;
        let value = PmlsDiagnostic {
            n: d.n,
            m: d.m,
            p: d.p,
            bound: d.bound,
            asymptotic: d.asymptotic,
            monte_carlo: d.monte_carlo,
            monte_carlo_se: d.monte_carlo_se,
            trials: d.trials,
        };
        write(out, value, "out")
    })
}
