//! C ABI over `countdpd`.
//!
//! Every fallible call returns a [`CdpdStatus`]. On failure the message is
//! available from [`cdpd_last_error`] on the same thread until the next call.
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use countdpd::cli::{parse_family, parse_model, read_dataset};
use countdpd::simgen::{simulate, SimSpec};
use countdpd::tune::tune;
use countdpd::{fit, Dataset, DpdConfig, Error, FitOptions, FitResult};

/// Result codes. Values are stable.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdpdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Panic = 4,
    Domain = 10,
    Truncation = 11,
    InfeasibleParams = 12,
    InvalidSpec = 13,
    NonConvergence = 14,
    SingularInformation = 15,
    GridEmpty = 16,
    Tune = 17,
    Explosion = 18,
    ScenarioUnstable = 19,
    DegenerateSample = 20,
    Parse = 21,
    NegativeCount = 22,
    NonFiniteCovariate = 23,
    Io = 24,
    Json = 25,
}

impl From<&Error> for CdpdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => CdpdStatus::Domain,
            Error::Truncation { .. } => CdpdStatus::Truncation,
            Error::InfeasibleParams(_) => CdpdStatus::InfeasibleParams,
            Error::InvalidSpec(_) => CdpdStatus::InvalidSpec,
            Error::NonConvergence(_) => CdpdStatus::NonConvergence,
            Error::SingularInformation { .. } => CdpdStatus::SingularInformation,
            Error::GridEmpty { .. } => CdpdStatus::GridEmpty,
            Error::Tune(_) => CdpdStatus::Tune,
            Error::Explosion { .. } => CdpdStatus::Explosion,
            Error::ScenarioUnstable { .. } => CdpdStatus::ScenarioUnstable,
            Error::DegenerateSample { .. } => CdpdStatus::DegenerateSample,
            Error::Parse { .. } => CdpdStatus::Parse,
            Error::NegativeCount { .. } => CdpdStatus::NegativeCount,
            Error::NonFiniteCovariate { .. } => CdpdStatus::NonFiniteCovariate,
            Error::Io(_) => CdpdStatus::Io,
            Error::Json(_) => CdpdStatus::Json,
        }
    }
}

/// Observed counts and covariates.
pub struct CdpdDataset(Dataset);

/// A fitted model.
pub struct CdpdFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CdpdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(CdpdStatus::from(&e), format!("{}: {e}", e.kind_name()))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CdpdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CdpdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside countdpd".into());
            CdpdStatus::Panic
        }
    }
}

fn null() -> Failure {
    Failure(CdpdStatus::NullPointer, "null pointer argument".into())
}

unsafe fn as_ref<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn as_str<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(CdpdStatus::InvalidUtf8, "argument is not valid UTF-8".into()))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if len < src.len() {
        return Err(Failure(CdpdStatus::BufferTooSmall, format!("buffer holds {len} values, {} needed", src.len())));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(null());
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn cdpd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn cdpd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a dataset from `n` counts and a row-major `n × d_x` covariate block.
/// `x` may be null when `d_x` is 0.
///
/// # Safety
/// `y` must point to `n` values and `x` to `n * d_x` values.
#[no_mangle]
pub unsafe extern "C" fn cdpd_dataset_new(
    y: *const u64,
    n: usize,
    x: *const f64,
    d_x: usize,
    out: *mut *mut CdpdDataset,
) -> CdpdStatus {
    guard(|| {
        if y.is_null() || (d_x > 0 && x.is_null()) {
            return Err(null());
        }
        let y = std::slice::from_raw_parts(y, n).to_vec();
        let x = if d_x == 0 { Vec::new() } else { std::slice::from_raw_parts(x, n * d_x).to_vec() };
        put(out, CdpdDataset(Dataset::from_flat(y, x, d_x)?))
    })
}

/// Reads a `y,x1,...,xd` CSV file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cdpd_dataset_read_csv(path: *const c_char, out: *mut *mut CdpdDataset) -> CdpdStatus {
    guard(|| put(out, CdpdDataset(read_dataset(Path::new(as_str(path)?))?)))
}

/// Simulates a dataset from a JSON-encoded simulation spec.
///
/// # Safety
/// `spec_json` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cdpd_simulate_json(spec_json: *const c_char, out: *mut *mut CdpdDataset) -> CdpdStatus {
    guard(|| {
        let spec: SimSpec = serde_json::from_str(as_str(spec_json)?).map_err(Error::from)?;
        put(out, CdpdDataset(simulate(&spec)?))
    })
}

/// Number of observations, or 0 for null.
///
/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn cdpd_dataset_len(data: *const CdpdDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// Number of covariate columns, or 0 for null.
///
/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn cdpd_dataset_covariate_dim(data: *const CdpdDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.covariate_dim())
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cdpd_dataset_free(data: *mut CdpdDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

unsafe fn config(data: &Dataset, family: *const c_char, model: *const c_char, alpha: f64) -> Result<DpdConfig, Failure> {
    let family = parse_family(as_str(family)?)?;
    let model = parse_model(as_str(model)?)?;
    Ok(DpdConfig::for_data(alpha, family, model, data)?)
}

/// Fits the model with default options. `family` is `poisson`, `nb:<r>` or
/// `bernoulli`; `model` is `ingarch:<q>,<p>[:<transform>,...]` or `knot:<xi>`.
///
/// # Safety
/// String arguments must be nul-terminated, `data` a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cdpd_fit(
    data: *const CdpdDataset,
    family: *const c_char,
    model: *const c_char,
    alpha: f64,
    out: *mut *mut CdpdFit,
) -> CdpdStatus {
    guard(|| {
        let data = &as_ref(data)?.0;
        let cfg = config(data, family, model, alpha)?;
        put(out, CdpdFit(fit(&cfg, data, None, &FitOptions::default())?))
    })
}

/// Selects α over the default grid and returns the fit at the selected value.
///
/// # Safety
/// As for [`cdpd_fit`]; `alpha_opt` may be null.
#[no_mangle]
pub unsafe extern "C" fn cdpd_tune(
    data: *const CdpdDataset,
    family: *const c_char,
    model: *const c_char,
    alpha_opt: *mut f64,
    out: *mut *mut CdpdFit,
) -> CdpdStatus {
    guard(|| {
        let data = &as_ref(data)?.0;
        let cfg = config(data, family, model, 1.0)?;
        let report = tune(&cfg, data, None, &FitOptions::default())?;
        let best = report.best_fit().cloned().ok_or_else(|| Failure(CdpdStatus::Tune, "no grid point produced a fit".into()))?;
        if !alpha_opt.is_null() {
            *alpha_opt = report.alpha_opt;
        }
        put(out, CdpdFit(best))
    })
}

/// Number of parameters, or 0 for null.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn cdpd_fit_dim(fit: *const CdpdFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.theta.len())
}

/// Objective value at the estimate, or NaN for null.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn cdpd_fit_objective(fit: *const CdpdFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.0.objective)
}

/// Copies θ̂ into `buf`, which must hold at least [`cdpd_fit_dim`] values.
///
/// # Safety
/// `buf` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn cdpd_fit_theta(fit: *const CdpdFit, buf: *mut f64, len: usize) -> CdpdStatus {
    guard(|| copy_out(&as_ref(fit)?.0.theta, buf, len))
}

/// Copies the sandwich standard errors into `buf`.
///
/// # Safety
/// `buf` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn cdpd_fit_std_errors(fit: *const CdpdFit, buf: *mut f64, len: usize) -> CdpdStatus {
    guard(|| {
        let f = &as_ref(fit)?.0;
        let se = f.std_errors.as_ref().ok_or_else(|| {
            let why = f.covariance_error.clone().unwrap_or_else(|| "covariance not computed".into());
            Failure(CdpdStatus::SingularInformation, why)
        })?;
        copy_out(se, buf, len)
    })
}

/// Full fit as JSON. Release the string with [`cdpd_string_free`].
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cdpd_fit_to_json(fit: *const CdpdFit, out: *mut *mut c_char) -> CdpdStatus {
    guard(|| {
        let json = serde_json::to_string(&as_ref(fit)?.0).map_err(Error::from)?;
        if out.is_null() {
            return Err(null());
        }
        *out = CString::new(json).expect("JSON has no nul bytes").into_raw();
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cdpd_fit_free(fit: *mut CdpdFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cdpd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
