//! C ABI over `emf-core`: load checkpoints, forecast, and calibrate
//! conformal intervals.
//!
//! Every fallible call returns an [`EmfStatus`]. On failure a description is
//! available from [`emf_last_error_message`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Matrices are passed
//! as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use emf_core::conformal::{
    calibrate_multistep, collect_residuals, critical_epsilon, evaluate_band, predict_interval, tos_scores,
    ConformalBand, ConformalError, CoverageReport, WidthSign,
};
use emf_core::model::checkpoint::{self, CheckpointError};
use emf_core::model::AnyModel;
use emf_core::nn::Differentiable;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BadCheckpoint = 4,
    InsufficientCalibration = 5,
    Numeric = 6,
    Panic = 7,
}

/// Coverage of a set of intervals on held-out targets.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmfCoverage {
    /// Fraction of (example, step) pairs covered.
    pub ic: f64,
    /// Fraction of examples covered at every step.
    pub jc: f64,
    /// Mean interval width.
    pub miw: f64,
    pub n_test: usize,
}

impl From<CoverageReport> for EmfCoverage {
    fn from(r: CoverageReport) -> Self {
        Self {
            ic: r.ic,
            jc: r.jc,
            miw: r.miw,
            n_test: r.n_test,
        }
    }
}

/// A forecaster loaded from a checkpoint.
pub struct EmfModel {
    inner: AnyModel,
}

/// Per-step conformal radii.
pub struct EmfBand {
    inner: ConformalBand,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EmfStatus, String);

impl From<ConformalError> for Failure {
    fn from(e: ConformalError) -> Self {
        let status = match e {
            ConformalError::InsufficientCalibration { .. } => EmfStatus::InsufficientCalibration,
            ConformalError::NonFinite(_) => EmfStatus::Numeric,
            _ => EmfStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let status = match e {
            CheckpointError::Io { .. } => EmfStatus::Io,
            _ => EmfStatus::BadCheckpoint,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, recording its error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EmfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EmfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            EmfStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(EmfStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(EmfStatus::InvalidArgument, msg)
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn rows(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width).map(<[f64]>::to_vec).collect()
}

fn checked_len(n: usize, width: usize, what: &str) -> Result<usize, Failure> {
    n.checked_mul(width)
        .ok_or_else(|| invalid(format!("{what}: {n} x {width} overflows")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn emf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or null if none.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn emf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emf_model_load(path: *const c_char, out: *mut *mut EmfModel) -> EmfStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8".into()))?;
        let ck = checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(EmfModel { inner: ck.model }));
        Ok(())
    })
}

/// Decodes a checkpoint held in memory.
///
/// # Safety
/// `data` must be valid for `len` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emf_model_from_bytes(data: *const u8, len: usize, out: *mut *mut EmfModel) -> EmfStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = checkpoint::decode(std::slice::from_raw_parts(data, len))?;
        *out = Box::into_raw(Box::new(EmfModel { inner: ck.model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from `emf_model_load` or `emf_model_from_bytes` and not
/// have been freed.
#[no_mangle]
pub unsafe extern "C" fn emf_model_free(model: *mut EmfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input window length, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn emf_model_lookback(model: *const EmfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.lookback())
}

/// Forecast length, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn emf_model_horizon(model: *const EmfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.horizon())
}

/// Number of trainable scalars, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn emf_model_param_count(model: *const EmfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_params())
}

/// Model family name ("emforecaster", "dlinear", "mlp", "persistence") as a
/// static string, or null for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn emf_model_kind(model: *const EmfModel) -> *const c_char {
    match model.as_ref().map(|m| m.inner.kind().as_str()) {
        Some("emforecaster") => c"emforecaster".as_ptr(),
        Some("dlinear") => c"dlinear".as_ptr(),
        Some("mlp") => c"mlp".as_ptr(),
        Some("persistence") => c"persistence".as_ptr(),
        _ => std::ptr::null(),
    }
}

/// Forecasts `n` windows. `inputs` holds `n * lookback` values and `out`
/// receives `n * horizon`.
///
/// # Safety
/// `model` must be a live handle; the buffers must have the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn emf_model_predict(
    model: *const EmfModel,
    inputs: *const f64,
    n: usize,
    out: *mut f64,
) -> EmfStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        if n == 0 {
            return Err(invalid("no windows to forecast".into()));
        }
        let (l, o) = (m.lookback(), m.horizon());
        let x = slice(inputs, checked_len(n, l, "inputs")?, "inputs")?;
        let y = slice_mut(out, checked_len(n, o, "out")?, "out")?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Failure(EmfStatus::Numeric, "inputs contain non-finite values".into()));
        }
        let preds = m
            .predict_batch(&rows(x, l))
            .map_err(|e| Failure(EmfStatus::Numeric, e.to_string()))?;
        for (dst, src) in y.chunks_mut(o).zip(&preds) {
            dst.copy_from_slice(src);
        }
        Ok(())
    })
}

/// Split-conformal critical score of `m` residuals at level `alpha`.
///
/// # Safety
/// `residuals` must be valid for `m` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emf_critical_epsilon(residuals: *const f64, m: usize, alpha: f64, out: *mut f64) -> EmfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = critical_epsilon(slice(residuals, m, "residuals")?, alpha)?;
        Ok(())
    })
}

/// Calibrates a multi-step band from `m` calibration forecasts and targets,
/// each `m * horizon` values.
///
/// # Safety
/// The buffers must have the stated sizes and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emf_band_calibrate(
    forecasts: *const f64,
    targets: *const f64,
    m: usize,
    horizon: usize,
    alpha: f64,
    out: *mut *mut EmfBand,
) -> EmfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if horizon == 0 {
            return Err(invalid("horizon must be positive".into()));
        }
        let len = checked_len(m, horizon, "calibration")?;
        let f = rows(slice(forecasts, len, "forecasts")?, horizon);
        let t = rows(slice(targets, len, "targets")?, horizon);
        let band = calibrate_multistep(&collect_residuals(&f, &t)?, alpha)?;
        *out = Box::into_raw(Box::new(EmfBand { inner: band }));
        Ok(())
    })
}

/// Releases a band. Null is ignored.
///
/// # Safety
/// `band` must come from `emf_band_calibrate` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn emf_band_free(band: *mut EmfBand) {
    if !band.is_null() {
        drop(Box::from_raw(band));
    }
}

/// Number of steps covered by the band, or 0 for a null handle.
///
/// # Safety
/// `band` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn emf_band_horizon(band: *const EmfBand) -> usize {
    band.as_ref().map_or(0, |b| b.inner.epsilons.len())
}

/// Copies the per-step radii into `out`, which holds `horizon` values.
///
/// # Safety
/// `band` must be a live handle and `out` valid for `horizon` writes.
#[no_mangle]
pub unsafe extern "C" fn emf_band_epsilons(band: *const EmfBand, out: *mut f64, horizon: usize) -> EmfStatus {
    guard(|| {
        let b = &band.as_ref().ok_or_else(|| null("band"))?.inner;
        if horizon != b.epsilons.len() {
            return Err(invalid(format!("band has {} steps, buffer {horizon}", b.epsilons.len())));
        }
        slice_mut(out, horizon, "out")?.copy_from_slice(&b.epsilons);
        Ok(())
    })
}

/// Interval bounds around one forecast of `horizon` values.
///
/// # Safety
/// `band` must be a live handle; the three buffers must hold `horizon` values.
#[no_mangle]
pub unsafe extern "C" fn emf_band_interval(
    band: *const EmfBand,
    forecast: *const f64,
    horizon: usize,
    lower: *mut f64,
    upper: *mut f64,
) -> EmfStatus {
    guard(|| {
        let b = &band.as_ref().ok_or_else(|| null("band"))?.inner;
        let bounds = predict_interval(slice(forecast, horizon, "forecast")?, b)?;
        let lo = slice_mut(lower, horizon, "lower")?;
        let hi = slice_mut(upper, horizon, "upper")?;
        for (i, [l, u]) in bounds.into_iter().enumerate() {
            lo[i] = l;
            hi[i] = u;
        }
        Ok(())
    })
}

/// Coverage of the band's intervals on `n` forecasts and targets, each
/// `n * horizon` values.
///
/// # Safety
/// `band` must be a live handle; the buffers must have the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn emf_band_coverage(
    band: *const EmfBand,
    forecasts: *const f64,
    targets: *const f64,
    n: usize,
    horizon: usize,
    out: *mut EmfCoverage,
) -> EmfStatus {
    guard(|| {
        let b = &band.as_ref().ok_or_else(|| null("band"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        if horizon == 0 {
            return Err(invalid("horizon must be positive".into()));
        }
        let len = checked_len(n, horizon, "test set")?;
        let f = rows(slice(forecasts, len, "forecasts")?, horizon);
        let t = rows(slice(targets, len, "targets")?, horizon);
        *out = evaluate_band(b, &f, &t)?.into();
        Ok(())
    })
}

/// Trade-off scores of `k >= 2` competing predictors into `out` (`k`
/// values). A non-zero `verbatim_sign` selects `1 / (1 + e^z)` for the width
/// term instead of the default `1 / (1 + e^-z)`.
///
/// # Safety
/// `reports` must be valid for `k` reads and `out` for `k` writes.
#[no_mangle]
pub unsafe extern "C" fn emf_tos_scores(
    reports: *const EmfCoverage,
    k: usize,
    beta: f64,
    lambda: f64,
    verbatim_sign: i32,
    out: *mut f64,
) -> EmfStatus {
    guard(|| {
        if reports.is_null() && k > 0 {
            return Err(null("reports"));
        }
        let rs: Vec<CoverageReport> = if k == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(reports, k)
                .iter()
                .map(|r| CoverageReport {
                    ic: r.ic,
                    jc: r.jc,
                    miw: r.miw,
                    n_test: r.n_test,
                })
                .collect()
        };
        let sign = if verbatim_sign != 0 {
            WidthSign::Verbatim
        } else {
            WidthSign::Intent
        };
        let scores = tos_scores(&rs, beta, lambda, sign)?;
        slice_mut(out, k, "out")?.copy_from_slice(&scores);
        Ok(())
    })
}
