//! C ABI over the transport-map library.
//!
//! Two opaque handles are exposed: [`TmsbiMap`], a posterior transport map
//! written by the assimilation phase, and [`TmsbiSurrogate`], a surrogate
//! likelihood from the surrogate registry. Every fallible function returns
//! one of the `TMSBI_*` status codes; on failure the message is available
//! from [`tmsbi_last_error_message`] on the same thread.
//!
//! Arrays are caller-owned. Sample matrices are row-major, one sample per row.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use tmsbi::sbi::{push_samples, SurrogateLikelihood};
use tmsbi::transport::ComposedMap;
use tmsbi::Error;

pub const TMSBI_OK: c_int = 0;
/// A required pointer argument was null.
pub const TMSBI_ERR_NULL_POINTER: c_int = 1;
/// An argument was out of range, not UTF-8, or of the wrong length.
pub const TMSBI_ERR_INVALID_ARGUMENT: c_int = 2;
/// A file could not be read.
pub const TMSBI_ERR_IO: c_int = 3;
/// A file or string was not a valid map or surrogate document.
pub const TMSBI_ERR_FORMAT: c_int = 4;
/// Evaluation failed (non-finite input, inversion bracket failure, ...).
pub const TMSBI_ERR_NUMERICAL: c_int = 5;
/// A Rust panic was caught at the boundary.
pub const TMSBI_ERR_PANIC: c_int = 6;

/// Posterior transport map from reference `N(0, I)` to the posterior.
pub struct TmsbiMap {
    map: ComposedMap,
}

/// Surrogate likelihood `π̃(y | θ)` of one assimilation step.
pub struct TmsbiSurrogate {
    surrogate: SurrogateLikelihood,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(c_int, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => TMSBI_ERR_IO,
            Error::Format { .. } | Error::Json(_) => TMSBI_ERR_FORMAT,
            Error::DimensionMismatch { .. } | Error::InvalidArgument(_) | Error::Config(_) => {
                TMSBI_ERR_INVALID_ARGUMENT
            }
            _ => TMSBI_ERR_NUMERICAL,
        };
        Failure(code, e.to_string())
    }
}

fn format_error(e: Error) -> Failure {
    Failure(TMSBI_ERR_FORMAT, e.to_string())
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TMSBI_ERR_INVALID_ARGUMENT, msg.into())
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TMSBI_OK,
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            TMSBI_ERR_PANIC
        }
    }
}

unsafe fn nonnull<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(TMSBI_ERR_NULL_POINTER, format!("{what} is null")))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    nonnull(p, what)?;
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    nonnull(p, what)?;
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn text(p: *const c_char, what: &str) -> Result<String, Failure> {
    nonnull(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map(String::from)
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(TMSBI_ERR_NULL_POINTER, "output handle is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn read_file(path: &str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(TMSBI_ERR_IO, format!("{path}: {e}")))
}

fn check_len(got: usize, expected: usize, what: &str) -> Result<(), Failure> {
    if got == expected {
        Ok(())
    } else {
        Err(invalid(format!("{what} has length {got}, expected {expected}")))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tmsbi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tmsbi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a posterior map file (`assimilation/maps/posterior-NNNN.json`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_map_load(path: *const c_char, out: *mut *mut TmsbiMap) -> c_int {
    guard(|| {
        let path = text(path, "path")?;
        let map = ComposedMap::from_json(&read_file(&path)?).map_err(format_error)?;
        store(out, TmsbiMap { map })
    })
}

/// Parses a posterior map from its JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_map_from_json(json: *const c_char, out: *mut *mut TmsbiMap) -> c_int {
    guard(|| {
        let map = ComposedMap::from_json(&text(json, "json")?).map_err(format_error)?;
        store(out, TmsbiMap { map })
    })
}

/// Releases a map; null is ignored.
///
/// # Safety
/// `map` must come from a `tmsbi_map_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_map_free(map: *mut TmsbiMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Parameter dimension of the map; 0 for null.
///
/// # Safety
/// `map` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_map_dim(map: *const TmsbiMap) -> usize {
    map.as_ref().map_or(0, |m| m.map.dim())
}

/// Number of maps in the composition; 0 for null.
///
/// # Safety
/// `map` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_map_length(map: *const TmsbiMap) -> usize {
    map.as_ref().map_or(0, |m| m.map.len())
}

/// Pushes a reference point `x` to the posterior: `out = T(x)`.
///
/// # Safety
/// `x` and `out` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_map_evaluate(
    map: *const TmsbiMap,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> c_int {
    guard(|| {
        let m = &nonnull(map, "map")?.map;
        check_len(dim, m.dim(), "x")?;
        let z = m.evaluate(input(x, dim, "x")?)?;
        output(out, dim, "out")?.copy_from_slice(&z);
        Ok(())
    })
}

/// Pulls a posterior point back to the reference: `out = T⁻¹(theta)`.
///
/// # Safety
/// `theta` and `out` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_map_inverse(
    map: *const TmsbiMap,
    theta: *const f64,
    dim: usize,
    out: *mut f64,
) -> c_int {
    guard(|| {
        let m = &nonnull(map, "map")?.map;
        check_len(dim, m.dim(), "theta")?;
        let x = m.inverse(input(theta, dim, "theta")?)?;
        output(out, dim, "out")?.copy_from_slice(&x);
        Ok(())
    })
}

/// Draws `n` posterior samples into `out` (`n × dim`, row-major);
/// deterministic given `seed`.
///
/// # Safety
/// `out` must point to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_map_sample(
    map: *const TmsbiMap,
    n: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> c_int {
    guard(|| {
        let m = &nonnull(map, "map")?.map;
        let need = n
            .checked_mul(m.dim())
            .ok_or_else(|| invalid("sample count overflows"))?;
        check_len(out_len, need, "out")?;
        let rows = push_samples(m, n, seed)?;
        for (dst, row) in output(out, out_len, "out")?.chunks_exact_mut(m.dim()).zip(&rows) {
            dst.copy_from_slice(row);
        }
        Ok(())
    })
}

/// Loads one surrogate file (`registry/surrogate-NNNN.json`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_surrogate_load(path: *const c_char, out: *mut *mut TmsbiSurrogate) -> c_int {
    guard(|| {
        let path = text(path, "path")?;
        let surrogate = SurrogateLikelihood::from_json(&read_file(&path)?).map_err(format_error)?;
        store(out, TmsbiSurrogate { surrogate })
    })
}

/// Releases a surrogate; null is ignored.
///
/// # Safety
/// `s` must come from `tmsbi_surrogate_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_surrogate_free(s: *mut TmsbiSurrogate) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Assimilation step the surrogate belongs to; 0 for null.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_surrogate_step(s: *const TmsbiSurrogate) -> usize {
    s.as_ref().map_or(0, |s| s.surrogate.step())
}

/// Parameter dimension; 0 for null.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_surrogate_n_theta(s: *const TmsbiSurrogate) -> usize {
    s.as_ref().map_or(0, |s| s.surrogate.n_theta())
}

/// Data dimension; 0 for null.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_surrogate_n_y(s: *const TmsbiSurrogate) -> usize {
    s.as_ref().map_or(0, |s| s.surrogate.n_y())
}

/// Surrogate log-likelihood `log π̃(y | θ)`. When `grad` is non-null the
/// θ-gradient is written there (`n_theta` doubles).
///
/// # Safety
/// `theta` and `grad` (if non-null) must hold `n_theta` doubles, `y` must
/// hold `n_y` doubles and `value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tmsbi_surrogate_loglik(
    s: *const TmsbiSurrogate,
    theta: *const f64,
    n_theta: usize,
    y: *const f64,
    n_y: usize,
    value: *mut f64,
    grad: *mut f64,
) -> c_int {
    guard(|| {
        let s = &nonnull(s, "surrogate")?.surrogate;
        check_len(n_theta, s.n_theta(), "theta")?;
        check_len(n_y, s.n_y(), "y")?;
        if value.is_null() {
            return Err(Failure(TMSBI_ERR_NULL_POINTER, "value is null".into()));
        }
        let (th, yy) = (input(theta, n_theta, "theta")?, input(y, n_y, "y")?);
        if grad.is_null() {
            *value = s.loglik(th, yy)?;
        } else {
            let (v, g) = s.loglik_grad(th, yy)?;
            output(grad, n_theta, "grad")?.copy_from_slice(&g);
            *value = v;
        }
        Ok(())
    })
}
