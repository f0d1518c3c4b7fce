//! C interface to the density-evolution toolkit.
//!
//! The surface follows the conventions C callers expect from a foreign
//! library:
//!
//! - **Opaque handles.**  An ensemble lives behind a `MetdeEnsemble*`
//!   created by one of the `metde_ensemble_*` constructors and released by
//!   [`metde_ensemble_free`].  The pointee layout is private.
//! - **Status codes.**  Every fallible function returns a [`MetdeStatus`];
//!   out-parameters are written only when the status is `OK`.
//! - **Thread-local error text.**  After a non-`OK` status,
//!   [`metde_last_error`] returns a message describing the most recent
//!   failure on the calling thread; the pointer stays valid until the next
//!   failure on that thread.
//! - **Panic containment.**  Internal panics are caught at the boundary and
//!   surfaced as the `PANIC` status instead of unwinding into C.
//!
//! The committed header `include/metde.h` is regenerated from this file on
//! every build, so it cannot drift from the code.
//!
//! # Example (Rust view of the C contract)
//!
//! ```
//! use metde_ffi::*;
//!
//! let mut ens: *mut MetdeEnsemble = std::ptr::null_mut();
//! let status = unsafe { metde_ensemble_regular(3, 6, &mut ens) };
//! assert_eq!(status, MetdeStatus::Ok);
//! assert!((unsafe { metde_ensemble_rate(ens) } - 0.5).abs() < 1e-12);
//! unsafe { metde_ensemble_free(ens) };
//! ```

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use metde::ensemble::MetEnsemble;
use metde::full_de::{run_full_de, DeConfig};
use metde::gauss_approx::{run_approx, ApproxConfig, ApproxMethod};
use metde::hybrid::{run_hybrid, HybridConfig};
use metde::threshold::{find_threshold, Method, ThresholdConfig};

// ---------------------------------------------------------------------------
// Status and method codes
// ---------------------------------------------------------------------------

/// Result of a call into the library.  Out-parameters are written only when
/// the status is `OK`; any other value leaves them untouched and records a
/// message retrievable through `metde_last_error`.
#[repr(u32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetdeStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument value was outside its legal range.
    InvalidArgument = 3,
    /// An ensemble definition failed to parse or validate.
    ParseError = 4,
    /// Reading the ensemble file failed.
    IoError = 5,
    /// The analysis itself failed (for example, no threshold bracket).
    ComputeError = 6,
    /// An internal panic was caught at the boundary.
    Panic = 7,
}

/// Analysis method selector, passed to `metde_threshold` and `metde_evolve`
/// as a `uint32_t` holding one of these values.
#[repr(u32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetdeMethod {
    /// Full density evolution over quantized densities.
    Full = 0,
    /// Gaussian approximation tracking message means.
    Mean = 1,
    /// Gaussian approximation tracking error probabilities.
    Ber = 2,
    /// Reciprocal-channel approximation.
    Rca = 3,
    /// Full density evolution handing over to the mean recursion.
    Hybrid = 4,
}

/// An ensemble behind the C interface.  Create with the `metde_ensemble_*`
/// constructors, release with `metde_ensemble_free`; the layout is private.
pub struct MetdeEnsemble {
    inner: MetEnsemble,
}

// ---------------------------------------------------------------------------
// Error plumbing
// ---------------------------------------------------------------------------

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

/// Records the failure text for the calling thread and passes the status on.
fn fail(status: MetdeStatus, message: impl Into<Vec<u8>>) -> MetdeStatus {
    let text = CString::new(message).unwrap_or_else(|_| {
        CString::new("error message contained an interior NUL byte").expect("static text")
    });
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
    status
}

/// Maps a library error onto the closest status code.
fn status_of(e: &metde::Error) -> MetdeStatus {
    use metde::Error::*;
    match e {
        InvalidEnsemble(_) | SocketImbalance { .. } | DegreeOneCheck { .. } | Json(_) => {
            MetdeStatus::ParseError
        }
        InvalidParameter(_) | NonPositive(_) | GridMismatch(_) => MetdeStatus::InvalidArgument,
        BracketFailure(_) | Template(_) => MetdeStatus::ComputeError,
        Io(_) => MetdeStatus::IoError,
    }
}

fn fail_with(e: metde::Error) -> MetdeStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `body` with panics converted to the `PANIC` status.
fn guarded(body: impl FnOnce() -> MetdeStatus) -> MetdeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic payload".into());
            fail(MetdeStatus::Panic, format!("internal panic: {what}"))
        }
    }
}

/// Reads a required C string argument.
///
/// # Safety
/// `ptr` must be null (reported as such) or point to a NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, MetdeStatus> {
    if ptr.is_null() {
        return Err(fail(MetdeStatus::NullArgument, format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail(MetdeStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn method_of(raw: u32) -> Result<Method, MetdeStatus> {
    match raw {
        x if x == MetdeMethod::Full as u32 => Ok(Method::Full),
        x if x == MetdeMethod::Mean as u32 => Ok(Method::Mean),
        x if x == MetdeMethod::Ber as u32 => Ok(Method::Ber),
        x if x == MetdeMethod::Rca as u32 => Ok(Method::Rca),
        x if x == MetdeMethod::Hybrid as u32 => Ok(Method::Hybrid),
        other => Err(fail(
            MetdeStatus::InvalidArgument,
            format!("unknown method code {other} (valid codes are 0..=4)"),
        )),
    }
}

/// Stores a freshly built ensemble behind `out`.
///
/// # Safety
/// `out` must be null (reported as such) or valid for writing one pointer.
unsafe fn deliver(out: *mut *mut MetdeEnsemble, built: metde::Result<MetEnsemble>) -> MetdeStatus {
    if out.is_null() {
        return fail(MetdeStatus::NullArgument, "out is null");
    }
    match built {
        Ok(inner) => {
            unsafe { *out = Box::into_raw(Box::new(MetdeEnsemble { inner })) };
            MetdeStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

// ---------------------------------------------------------------------------
// Ensemble lifecycle
// ---------------------------------------------------------------------------

/// Loads an ensemble definition from a JSON file at `path` into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writing one
/// pointer; the returned handle must be released with `metde_ensemble_free`.
#[no_mangle]
pub unsafe extern "C" fn metde_ensemble_from_file(
    path: *const c_char,
    out: *mut *mut MetdeEnsemble,
) -> MetdeStatus {
    guarded(|| {
        let path = match unsafe { read_str(path, "path") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        unsafe { deliver(out, MetEnsemble::from_json_file(path)) }
    })
}

/// Parses an ensemble definition from a JSON string into `*out`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for writing one
/// pointer; the returned handle must be released with `metde_ensemble_free`.
#[no_mangle]
pub unsafe extern "C" fn metde_ensemble_from_json(
    json: *const c_char,
    out: *mut *mut MetdeEnsemble,
) -> MetdeStatus {
    guarded(|| {
        let json = match unsafe { read_str(json, "json") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        unsafe { deliver(out, MetEnsemble::from_json_str(json)) }
    })
}

/// Builds the regular single-edge-type ensemble with the given variable and
/// check degrees into `*out`.
///
/// # Safety
/// `out` must be valid for writing one pointer; the returned handle must be
/// released with `metde_ensemble_free`.
#[no_mangle]
pub unsafe extern "C" fn metde_ensemble_regular(
    variable_degree: u32,
    check_degree: u32,
    out: *mut *mut MetdeEnsemble,
) -> MetdeStatus {
    guarded(|| unsafe {
        deliver(out, MetEnsemble::regular(variable_degree as usize, check_degree as usize))
    })
}

/// Releases an ensemble handle.  Passing null is a no-op; passing the same
/// handle twice is undefined behavior.
///
/// # Safety
/// `ensemble` must be null or a handle produced by this library that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn metde_ensemble_free(ensemble: *mut MetdeEnsemble) {
    if !ensemble.is_null() {
        drop(unsafe { Box::from_raw(ensemble) });
    }
}

/// Design rate of the ensemble, or NaN for a null handle.
///
/// # Safety
/// `ensemble` must be null or a live handle produced by this library.
#[no_mangle]
pub unsafe extern "C" fn metde_ensemble_rate(ensemble: *const MetdeEnsemble) -> f64 {
    match unsafe { ensemble.as_ref() } {
        Some(e) => e.inner.rate(),
        None => f64::NAN,
    }
}

/// Number of edge types in the ensemble, or 0 for a null handle.
///
/// # Safety
/// `ensemble` must be null or a live handle produced by this library.
#[no_mangle]
pub unsafe extern "C" fn metde_ensemble_edge_types(ensemble: *const MetdeEnsemble) -> u32 {
    match unsafe { ensemble.as_ref() } {
        Some(e) => e.inner.edge_types() as u32,
        None => 0,
    }
}

// ---------------------------------------------------------------------------
// Analysis
// ---------------------------------------------------------------------------

/// Finds the decoding threshold of `ensemble` under `method` (a
/// `MetdeMethod` value) and writes it to `*out_sigma`.  `tolerance` is the
/// bisection stopping width in absolute noise units; pass 0 for the default.
///
/// # Safety
/// `ensemble` must be a live handle and `out_sigma` valid for writing one
/// double.
#[no_mangle]
pub unsafe extern "C" fn metde_threshold(
    ensemble: *const MetdeEnsemble,
    method: u32,
    tolerance: f64,
    out_sigma: *mut f64,
) -> MetdeStatus {
    guarded(|| {
        let Some(e) = (unsafe { ensemble.as_ref() }) else {
            return fail(MetdeStatus::NullArgument, "ensemble is null");
        };
        if out_sigma.is_null() {
            return fail(MetdeStatus::NullArgument, "out_sigma is null");
        }
        let method = match method_of(method) {
            Ok(m) => m,
            Err(status) => return status,
        };
        let mut cfg = ThresholdConfig::default();
        if tolerance > 0.0 {
            cfg.tolerance = tolerance;
        }
        match find_threshold(&e.inner, method, &cfg) {
            Ok(outcome) => {
                unsafe { *out_sigma = outcome.sigma_star };
                MetdeStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Runs one evolution of `ensemble` at noise level `sigma` under `method`
/// (a `MetdeMethod` value).  `max_iterations` caps the run; pass 0 for the
/// default.  Each non-null out-parameter receives its part of the outcome:
/// whether the run converged (0 or 1), the iterations executed, and the
/// final error probability.
///
/// # Safety
/// `ensemble` must be a live handle; each out-parameter must be null or
/// valid for writing its type.
#[no_mangle]
pub unsafe extern "C" fn metde_evolve(
    ensemble: *const MetdeEnsemble,
    sigma: f64,
    method: u32,
    max_iterations: u32,
    out_converged: *mut i32,
    out_iterations: *mut u32,
    out_final_ber: *mut f64,
) -> MetdeStatus {
    guarded(|| {
        let Some(e) = (unsafe { ensemble.as_ref() }) else {
            return fail(MetdeStatus::NullArgument, "ensemble is null");
        };
        let method = match method_of(method) {
            Ok(m) => m,
            Err(status) => return status,
        };
        let cap = if max_iterations == 0 { None } else { Some(max_iterations as usize) };
        let run = || -> metde::Result<(bool, usize, f64)> {
            match method {
                Method::Full => {
                    let mut cfg = DeConfig::default();
                    if let Some(cap) = cap {
                        cfg.max_iterations = cap;
                    }
                    let o = run_full_de(&e.inner, sigma, &cfg)?;
                    Ok((o.converged, o.iterations, o.final_ber))
                }
                Method::Mean | Method::Ber | Method::Rca => {
                    let m = match method {
                        Method::Mean => ApproxMethod::Mean,
                        Method::Ber => ApproxMethod::Ber,
                        _ => ApproxMethod::Rca,
                    };
                    let mut cfg = ApproxConfig::default();
                    if let Some(cap) = cap {
                        cfg.max_iterations = cap;
                    }
                    let o = run_approx(&e.inner, sigma, m, &cfg)?;
                    Ok((o.converged, o.iterations, o.final_ber))
                }
                Method::Hybrid => {
                    let mut cfg = HybridConfig::default();
                    if let Some(cap) = cap {
                        cfg.de.max_iterations = cap;
                        cfg.approx.max_iterations = cap;
                    }
                    let o = run_hybrid(&e.inner, sigma, &cfg)?;
                    Ok((o.converged, o.iterations, o.final_ber))
                }
            }
        };
        match run() {
            Ok((converged, iterations, final_ber)) => {
                if !out_converged.is_null() {
                    unsafe { *out_converged = converged as i32 };
                }
                if !out_iterations.is_null() {
                    unsafe { *out_iterations = iterations as u32 };
                }
                if !out_final_ber.is_null() {
                    unsafe { *out_final_ber = final_ber };
                }
                MetdeStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Writes the Shannon-limit noise level for a binary-input AWGN channel at
/// the given code rate to `*out_sigma`.
///
/// # Safety
/// `out_sigma` must be valid for writing one double.
#[no_mangle]
pub unsafe extern "C" fn metde_shannon_sigma(rate: f64, out_sigma: *mut f64) -> MetdeStatus {
    guarded(|| {
        if out_sigma.is_null() {
            return fail(MetdeStatus::NullArgument, "out_sigma is null");
        }
        match metde::channel::shannon_sigma(rate) {
            Ok(sigma) => {
                unsafe { *out_sigma = sigma };
                MetdeStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

// ---------------------------------------------------------------------------
// Introspection
// ---------------------------------------------------------------------------

/// Message describing the most recent failure on the calling thread, or an
/// empty string if nothing failed yet.  The pointer stays valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn metde_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(text) => text.as_ptr(),
        None => c"".as_ptr(),
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn metde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error_text() -> String {
        unsafe { CStr::from_ptr(metde_last_error()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn regular_ensemble_round_trips_through_the_handle() {
        let mut ens: *mut MetdeEnsemble = std::ptr::null_mut();
        let status = unsafe { metde_ensemble_regular(3, 6, &mut ens) };
        assert_eq!(status, MetdeStatus::Ok);
        assert!(!ens.is_null());
        assert!((unsafe { metde_ensemble_rate(ens) } - 0.5).abs() < 1e-12);
        assert_eq!(unsafe { metde_ensemble_edge_types(ens) }, 1);
        unsafe { metde_ensemble_free(ens) };
    }

    #[test]
    fn null_and_malformed_arguments_surface_as_statuses() {
        let mut ens: *mut MetdeEnsemble = std::ptr::null_mut();
        assert_eq!(
            unsafe { metde_ensemble_from_json(std::ptr::null(), &mut ens) },
            MetdeStatus::NullArgument
        );
        assert!(last_error_text().contains("null"));

        let bad = c"{\"m_e\": 1".as_ptr();
        assert_eq!(unsafe { metde_ensemble_from_json(bad, &mut ens) }, MetdeStatus::ParseError);
        assert!(last_error_text().contains("json"), "got: {}", last_error_text());

        let mut sigma = 0.0;
        assert_eq!(
            unsafe { metde_threshold(std::ptr::null(), MetdeMethod::Mean as u32, 0.0, &mut sigma) },
            MetdeStatus::NullArgument
        );
        assert_eq!(unsafe { metde_shannon_sigma(1.5, &mut sigma) }, MetdeStatus::InvalidArgument);
    }

    #[test]
    fn unknown_method_codes_are_rejected() {
        let mut ens: *mut MetdeEnsemble = std::ptr::null_mut();
        assert_eq!(unsafe { metde_ensemble_regular(3, 6, &mut ens) }, MetdeStatus::Ok);
        let mut sigma = 0.0;
        let status = unsafe { metde_threshold(ens, 99, 0.0, &mut sigma) };
        assert_eq!(status, MetdeStatus::InvalidArgument);
        assert!(last_error_text().contains("99"));
        unsafe { metde_ensemble_free(ens) };
    }

    #[test]
    fn threshold_and_evolve_reproduce_the_known_values() {
        let mut ens: *mut MetdeEnsemble = std::ptr::null_mut();
        assert_eq!(unsafe { metde_ensemble_regular(3, 6, &mut ens) }, MetdeStatus::Ok);

        // Mean-recursion threshold of the regular (3,6) ensemble.
        let mut sigma = 0.0;
        let status = unsafe { metde_threshold(ens, MetdeMethod::Mean as u32, 1e-3, &mut sigma) };
        assert_eq!(status, MetdeStatus::Ok);
        assert!((sigma - 0.8719).abs() < 3e-3, "mean threshold via C surface, got {sigma}");

        // A run below that threshold converges.
        let (mut converged, mut iterations, mut ber) = (0, 0, 1.0);
        let status = unsafe {
            metde_evolve(
                ens,
                0.8,
                MetdeMethod::Mean as u32,
                0,
                &mut converged,
                &mut iterations,
                &mut ber,
            )
        };
        assert_eq!(status, MetdeStatus::Ok);
        assert_eq!(converged, 1);
        assert!(iterations > 0 && ber < 1e-9, "{iterations} iterations, final {ber}");

        // Null out-parameters are allowed and simply skipped.
        let status =
            unsafe { metde_evolve(ens, 2.0, MetdeMethod::Ber as u32, 5, std::ptr::null_mut(), std::ptr::null_mut(), std::ptr::null_mut()) };
        assert_eq!(status, MetdeStatus::Ok, "a non-converging capped run still succeeds");

        unsafe { metde_ensemble_free(ens) };
    }

    #[test]
    fn shannon_sigma_matches_the_library_value() {
        let mut sigma = 0.0;
        assert_eq!(unsafe { metde_shannon_sigma(0.5, &mut sigma) }, MetdeStatus::Ok);
        let direct = metde::channel::shannon_sigma(0.5).unwrap();
        assert_eq!(sigma, direct);
        assert!((sigma - 0.9787).abs() < 1e-3, "rate-1/2 Shannon noise level, got {sigma}");
    }

    #[test]
    fn version_string_is_static_and_non_empty() {
        let v = unsafe { CStr::from_ptr(metde_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
