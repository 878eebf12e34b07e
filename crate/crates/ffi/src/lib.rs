//! C ABI for the `condcov` estimator.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible call returns a
//! [`CondcovStatus`]; on failure, [`condcov_last_error`] describes the most
//! recent error raised on the calling thread. Panics never cross the
//! boundary; they surface as [`CondcovStatus::Panic`].
//!
//! Data are passed row-major: `x` holds `n * p` values, row `r` occupying
//! `x[r * p .. (r + 1) * p]`, and `y` holds `n` values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use condcov::basis::SizeRule;
use condcov::estimator::{estimate_matrix, estimate_pair, Dataset, EstimatorConfig, MatrixEstimate};
use condcov::{Error, ErrorClass};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondcovStatus {
    Ok = 0,
    /// Invalid setting or argument.
    ConfigError = 1,
    /// Input data rejected (too few rows, non-finite values, degenerate column).
    DataError = 2,
    /// Numerical failure during estimation.
    NumericError = 3,
    /// A required pointer argument was null.
    NullPointer = 4,
    /// The library panicked; this is a bug.
    Panic = 5,
}

/// Estimator settings.
pub struct CondcovConfig {
    inner: EstimatorConfig,
}

/// Result of a full-matrix estimate.
pub struct CondcovMatrixEstimate {
    inner: MatrixEstimate,
    config: EstimatorConfig,
}

/// Result of a single-entry estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CondcovPairEstimate {
    pub t_hat: f64,
    pub c_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n1: usize,
    pub n2: usize,
    pub basis_size: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> CondcovStatus {
    match err.class() {
        ErrorClass::Config => CondcovStatus::ConfigError,
        ErrorClass::Data => CondcovStatus::DataError,
        ErrorClass::Numeric => CondcovStatus::NumericError,
    }
}

/// Runs `body`, recording failures and containing panics.
fn guarded<F>(body: F) -> CondcovStatus
where
    F: FnOnce() -> Result<(), CondcovStatus>,
{
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CondcovStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            CondcovStatus::Panic
        }
    }
}

fn fail(err: Error) -> CondcovStatus {
    set_last_error(err.to_string());
    status_of(&err)
}

fn null(name: &str) -> CondcovStatus {
    set_last_error(format!("null pointer: {name}"));
    CondcovStatus::NullPointer
}

/// Copies caller arrays into a [`Dataset`].
///
/// # Safety
/// `x` must point to `n * p` readable values and `y` to `n`.
unsafe fn dataset_from(x: *const f64, y: *const f64, n: usize, p: usize) -> Result<Dataset, CondcovStatus> {
    if x.is_null() {
        return Err(null("x"));
    }
    if y.is_null() {
        return Err(null("y"));
    }
    let len = n
        .checked_mul(p)
        .ok_or_else(|| fail(Error::InvalidConfig("n * p overflows".into())))?;
    let xs = std::slice::from_raw_parts(x, len).to_vec();
    let ys = std::slice::from_raw_parts(y, n).to_vec();
    Dataset::new(p, xs, ys).map_err(fail)
}

/// Copies `values` into `out`, which must hold `len >= values.len()` entries.
///
/// # Safety
/// `out` must point to `len` writable values.
unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), CondcovStatus> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < values.len() {
        return Err(fail(Error::InvalidConfig(format!(
            "output buffer holds {len} values, need {}",
            values.len()
        ))));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn config_ref<'a>(cfg: *const CondcovConfig) -> Result<&'a CondcovConfig, CondcovStatus> {
    // SAFETY: non-null handles come from `condcov_config_new`.
    unsafe { cfg.as_ref() }.ok_or_else(|| null("config"))
}

fn config_mut<'a>(cfg: *mut CondcovConfig) -> Result<&'a mut CondcovConfig, CondcovStatus> {
    // SAFETY: non-null handles come from `condcov_config_new`.
    unsafe { cfg.as_mut() }.ok_or_else(|| null("config"))
}

fn estimate_ref<'a>(est: *const CondcovMatrixEstimate) -> Result<&'a CondcovMatrixEstimate, CondcovStatus> {
    // SAFETY: non-null handles come from `condcov_estimate_matrix`.
    unsafe { est.as_ref() }.ok_or_else(|| null("estimate"))
}

/// Returns a new configuration with default settings, or null on panic.
#[no_mangle]
pub extern "C" fn condcov_config_new() -> *mut CondcovConfig {
    catch_unwind(|| {
        Box::into_raw(Box::new(CondcovConfig {
            inner: EstimatorConfig::default(),
        }))
    })
    .unwrap_or(ptr::null_mut())
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must be null or a handle from [`condcov_config_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn condcov_config_free(cfg: *mut CondcovConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

#[no_mangle]
pub extern "C" fn condcov_config_set_seed(cfg: *mut CondcovConfig, seed: u64) -> CondcovStatus {
    guarded(|| {
        config_mut(cfg)?.inner.seed = seed;
        Ok(())
    })
}

/// Sets the nominal interval level, strictly between 0 and 1.
#[no_mangle]
pub extern "C" fn condcov_config_set_confidence(cfg: *mut CondcovConfig, level: f64) -> CondcovStatus {
    guarded(|| {
        let cfg = config_mut(cfg)?;
        if !(level > 0.0 && level < 1.0) {
            return Err(fail(Error::InvalidConfig(format!(
                "confidence must lie in (0, 1), got {level}"
            ))));
        }
        cfg.inner.delta = 1.0 - level;
        Ok(())
    })
}

/// Fixes the basis size; 0 restores the default `ceil(sqrt(n2))` rule.
#[no_mangle]
pub extern "C" fn condcov_config_set_basis_size(cfg: *mut CondcovConfig, m: usize) -> CondcovStatus {
    guarded(|| {
        config_mut(cfg)?.inner.size_rule = if m == 0 { SizeRule::Sqrt } else { SizeRule::Fixed(m) };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn condcov_config_set_quad_order(cfg: *mut CondcovConfig, order: usize) -> CondcovStatus {
    guarded(|| {
        let cfg = config_mut(cfg)?;
        let mut next = cfg.inner.clone();
        next.quad_order = order;
        next.validate().map_err(fail)?;
        cfg.inner = next;
        Ok(())
    })
}

/// Sets the clipping range of the pilot density on the unit scale.
#[no_mangle]
pub extern "C" fn condcov_config_set_clip(cfg: *mut CondcovConfig, lo: f64, hi: f64) -> CondcovStatus {
    guarded(|| {
        let cfg = config_mut(cfg)?;
        let mut next = cfg.inner.clone();
        next.clip.lo = lo;
        next.clip.hi = hi;
        next.validate().map_err(fail)?;
        cfg.inner = next;
        Ok(())
    })
}

/// Estimates the full `p × p` matrix. On success `*out` receives a handle
/// to release with [`condcov_matrix_estimate_free`].
///
/// # Safety
/// `x` must point to `n * p` values, `y` to `n`, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn condcov_estimate_matrix(
    x: *const f64,
    y: *const f64,
    n: usize,
    p: usize,
    cfg: *const CondcovConfig,
    out: *mut *mut CondcovMatrixEstimate,
) -> CondcovStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = config_ref(cfg)?;
        let data = dataset_from(x, y, n, p)?;
        let inner = estimate_matrix(&data, &cfg.inner).map_err(fail)?;
        *out = Box::into_raw(Box::new(CondcovMatrixEstimate {
            inner,
            config: cfg.inner.clone(),
        }));
        Ok(())
    })
}

/// Estimates the single entry `(i, j)` (0-based) with its interval.
///
/// # Safety
/// `x` must point to `n * p` values, `y` to `n`, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn condcov_estimate_pair(
    x: *const f64,
    y: *const f64,
    n: usize,
    p: usize,
    i: usize,
    j: usize,
    cfg: *const CondcovConfig,
    out: *mut CondcovPairEstimate,
) -> CondcovStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = config_ref(cfg)?;
        let data = dataset_from(x, y, n, p)?;
        let est = estimate_pair(i, j, &data, &cfg.inner).map_err(fail)?;
        *out = CondcovPairEstimate {
            t_hat: est.t_hat,
            c_hat: est.c_hat,
            ci_lo: est.ci_lo,
            ci_hi: est.ci_hi,
            n1: est.n1,
            n2: est.n2,
            basis_size: est.m,
        };
        Ok(())
    })
}

/// Releases an estimate. Null is ignored.
///
/// # Safety
/// `est` must be null or a handle from [`condcov_estimate_matrix`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn condcov_matrix_estimate_free(est: *mut CondcovMatrixEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Number of X coordinates `p`, or 0 for a null handle.
#[no_mangle]
pub extern "C" fn condcov_matrix_estimate_dim(est: *const CondcovMatrixEstimate) -> usize {
    estimate_ref(est).map(|e| e.inner.p).unwrap_or(0)
}

fn flatten(mat: &[Vec<f64>]) -> Vec<f64> {
    mat.iter().flatten().copied().collect()
}

/// Copies the estimated `Cov(E[X|Y])`, row-major, into `out[0 .. p * p]`.
///
/// # Safety
/// `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn condcov_matrix_estimate_cov(
    est: *const CondcovMatrixEstimate,
    out: *mut f64,
    len: usize,
) -> CondcovStatus {
    guarded(|| copy_out(&flatten(&estimate_ref(est)?.inner.cov_matrix), out, len))
}

/// Copies the estimated `E[E[X_i|Y] E[X_j|Y]]`, row-major, into `out[0 .. p * p]`.
///
/// # Safety
/// `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn condcov_matrix_estimate_t(
    est: *const CondcovMatrixEstimate,
    out: *mut f64,
    len: usize,
) -> CondcovStatus {
    guarded(|| copy_out(&flatten(&estimate_ref(est)?.inner.t_matrix), out, len))
}

/// Copies the eigenvalues of the covariance estimate, descending, into `out[0 .. p]`.
///
/// # Safety
/// `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn condcov_matrix_estimate_eigenvalues(
    est: *const CondcovMatrixEstimate,
    out: *mut f64,
    len: usize,
) -> CondcovStatus {
    guarded(|| copy_out(&estimate_ref(est)?.inner.eigenvalues, out, len))
}

/// Copies the eigenvectors into `out[0 .. p * p]`; row `k` is the vector of
/// the `k`-th largest eigenvalue.
///
/// # Safety
/// `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn condcov_matrix_estimate_eigenvectors(
    est: *const CondcovMatrixEstimate,
    out: *mut f64,
    len: usize,
) -> CondcovStatus {
    guarded(|| copy_out(&flatten(&estimate_ref(est)?.inner.eigenvectors), out, len))
}

/// Serializes the estimate to JSON. On success `*out` receives a
/// NUL-terminated string to release with [`condcov_string_free`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn condcov_matrix_estimate_to_json(
    est: *const CondcovMatrixEstimate,
    out: *mut *mut c_char,
) -> CondcovStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let est = estimate_ref(est)?;
        let text = est.inner.to_json(&est.config).map_err(fail)?;
        let c = CString::new(text).map_err(|e| fail(Error::Numeric(e.to_string())))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn condcov_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null if the last
/// call succeeded. The pointer stays valid until the next call on the
/// same thread.
#[no_mangle]
pub extern "C" fn condcov_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Copies the last error message; convenience for Rust callers and tests.
pub fn last_error_message() -> Option<String> {
    let p = condcov_last_error();
    if p.is_null() {
        None
    } else {
        // SAFETY: the pointer refers to the thread-local CString.
        Some(unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
    }
}
