//! C ABI for tensor factor loading estimation.
//!
//! Series and estimates are opaque handles created and freed by this library.
//! Every fallible function returns a [`TfStatus`]; on failure the message is
//! available from [`tf_last_error`] on the same thread. Panics are caught at
//! the boundary and reported as [`TfStatus::Panic`].
//!
//! Data layout is column-major throughout: series values slice by slice with
//! the first tensor index fastest, loading matrices column by column. Modes
//! are zero-based.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tensor_factor::diagnostics::loss_projection;
use tensor_factor::io::{load_series, SeriesFormat};
use tensor_factor::spectral::projection_onto;
use tensor_factor::{estimate, Error, FactorEstimate, Matrix, Method, ModelSpec, TensorSeries};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad shape, rank, lag, method or buffer size.
    InvalidArgument = 2,
    /// Unreadable, malformed or degenerate input data.
    Data = 3,
    /// Non-finite values or a failed numerical routine.
    Numeric = 4,
    /// A panic was caught inside the library.
    Panic = 5,
}

/// Estimator codes accepted by [`tf_estimate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfMethod {
    Topup = 0,
    Tipup = 1,
    Itopup = 2,
    Itipup = 3,
    Up = 4,
}

/// A tensor time series.
pub struct TfSeries(TensorSeries);

/// The result of one estimation.
pub struct TfEstimate(FactorEstimate);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Fail(TfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => TfStatus::InvalidArgument,
            4 => TfStatus::Numeric,
            _ => TfStatus::Data,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(TfStatus::InvalidArgument, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TfStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TfStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(TfStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// `len` values from `p`; a null `p` is only accepted when `len` is zero.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// Writes `values` to `out` when it is non-null and large enough.
unsafe fn fill(values: &[f64], out: *mut f64, cap: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Ok(());
    }
    if cap < values.len() {
        return Err(invalid(format!(
            "buffer holds {cap} values, {} needed",
            values.len()
        )));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn store<T>(out: *mut T, v: T) {
    if !out.is_null() {
        *out = v;
    }
}

fn method_from(code: u32) -> Result<Method, Fail> {
    Ok(match code {
        0 => Method::Topup,
        1 => Method::Tipup,
        2 => Method::ITopup,
        3 => Method::ITipup,
        4 => Method::Up,
        _ => return Err(invalid(format!("unknown method code {code}"))),
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failed call on this thread (empty if none).
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a series of shape `dims[0..order]` and length `len` from
/// `data_len = prod(dims) * len` values.
///
/// # Safety
/// `dims` and `data` must point to `order` and `data_len` readable values,
/// `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn tf_series_new(
    dims: *const usize,
    order: usize,
    len: usize,
    data: *const f64,
    data_len: usize,
    out: *mut *mut TfSeries,
) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let dims = slice(dims, order, "dims")?.to_vec();
        let data = slice(data, data_len, "data")?;
        let d = dims.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
        if order == 0 || d.and_then(|d| d.checked_mul(len)) != Some(data_len) {
            return Err(invalid(format!(
                "{data_len} values do not fill shape {dims:?} times {len}"
            )));
        }
        let d = d.unwrap_or(0);
        let series = TensorSeries::new(dims, Matrix::from_column_slice(d, len, data))?;
        *out = Box::into_raw(Box::new(TfSeries(series)));
        Ok(())
    })
}

/// Loads a series file: `.csv` as long CSV, anything else as dense binary.
/// Unobserved long-CSV cells are zero.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn tf_series_load(path: *const c_char, out: *mut *mut TfSeries) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        non_null(path, "path")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let path = Path::new(path);
        let loaded = load_series(path, SeriesFormat::from_path(path))?;
        *out = Box::into_raw(Box::new(TfSeries(loaded.series)));
        Ok(())
    })
}

/// Releases a series; null is ignored.
///
/// # Safety
/// `series` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tf_series_free(series: *mut TfSeries) {
    if !series.is_null() {
        let _ = panic::catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(series))));
    }
}

/// Order, length and (when `dims` is non-null) the shape of a series.
///
/// # Safety
/// `series` must be a live handle; non-null outputs must be writable, `dims`
/// for `dims_cap` values.
#[no_mangle]
pub unsafe extern "C" fn tf_series_shape(
    series: *const TfSeries,
    dims: *mut usize,
    dims_cap: usize,
    order: *mut usize,
    len: *mut usize,
) -> TfStatus {
    guard(|| {
        non_null(series, "series")?;
        let x = &(*series).0;
        store(order, x.order());
        store(len, x.len());
        if !dims.is_null() {
            if dims_cap < x.order() {
                return Err(invalid(format!(
                    "dims buffer holds {dims_cap}, {} needed",
                    x.order()
                )));
            }
            ptr::copy_nonoverlapping(x.shape().as_ptr(), dims, x.order());
        }
        Ok(())
    })
}

/// Estimates the loading spaces of `series`.
///
/// `method` is a [`TfMethod`] code. `max_iter` and `iter_tol` apply to the
/// iterated methods only (`max_iter = 0` returns the starting estimate).
/// UP ignores `h0`.
///
/// # Safety
/// `series` must be a live handle, `ranks` point to `nranks` values and
/// `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn tf_estimate(
    series: *const TfSeries,
    method: u32,
    ranks: *const usize,
    nranks: usize,
    h0: usize,
    max_iter: usize,
    iter_tol: f64,
    out: *mut *mut TfEstimate,
) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        non_null(series, "series")?;
        let method = method_from(method)?;
        let ranks = slice(ranks, nranks, "ranks")?.to_vec();
        let h0 = if method == Method::Up { 0 } else { h0 };
        let spec = ModelSpec::new(ranks, h0, method).with_iterations(max_iter, iter_tol);
        let est = estimate(&(*series).0, &spec)?;
        *out = Box::into_raw(Box::new(TfEstimate(est)));
        Ok(())
    })
}

/// Releases an estimate; null is ignored.
///
/// # Safety
/// `est` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tf_estimate_free(est: *mut TfEstimate) {
    if !est.is_null() {
        let _ = panic::catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(est))));
    }
}

unsafe fn mode_of<'a>(
    est: *const TfEstimate,
    mode: usize,
) -> Result<(&'a FactorEstimate, usize), Fail> {
    non_null(est, "estimate")?;
    let e = &(*est).0;
    if mode >= e.order() {
        return Err(invalid(format!(
            "mode {mode} out of range for order {}",
            e.order()
        )));
    }
    Ok((e, mode))
}

/// Orthonormal basis of mode `mode`, column-major `rows × cols`. With a
/// null `out` only the shape is reported.
///
/// # Safety
/// `est` must be a live handle; non-null outputs must be writable, `out`
/// for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn tf_estimate_basis(
    est: *const TfEstimate,
    mode: usize,
    out: *mut f64,
    cap: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> TfStatus {
    guard(|| {
        let (e, k) = mode_of(est, mode)?;
        let b = &e.bases[k];
        store(rows, b.nrows());
        store(cols, b.ncols());
        fill(b.as_slice(), out, cap)
    })
}

/// Descending singular value ladder of mode `mode`. With a null `out` only
/// the length is reported.
///
/// # Safety
/// As for [`tf_estimate_basis`].
#[no_mangle]
pub unsafe extern "C" fn tf_estimate_ladder(
    est: *const TfEstimate,
    mode: usize,
    out: *mut f64,
    cap: usize,
    len: *mut usize,
) -> TfStatus {
    guard(|| {
        let (e, k) = mode_of(est, mode)?;
        let ladder = &e.singular_ladders[k];
        store(len, ladder.len());
        fill(ladder, out, cap)
    })
}

/// Sweeps used by an iterated method (0 otherwise).
///
/// # Safety
/// `est` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_estimate_iterations(
    est: *const TfEstimate,
    out: *mut usize,
) -> TfStatus {
    guard(|| {
        non_null(est, "estimate")?;
        non_null(out, "out")?;
        *out = (*est).0.iterations_used;
        Ok(())
    })
}

/// Spectral-norm distance between the estimated projection of mode `mode`
/// and the projection onto the column space of `truth` (column-major
/// `rows × cols`, any full-rank basis).
///
/// # Safety
/// `est` must be a live handle, `truth` point to `rows * cols` values and
/// `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn tf_projection_distance(
    est: *const TfEstimate,
    mode: usize,
    truth: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        let (e, k) = mode_of(est, mode)?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| invalid("truth shape overflows"))?;
        let a = slice(truth, n, "truth")?;
        if n == 0 {
            return Err(invalid("truth matrix is empty"));
        }
        let p = projection_onto(&Matrix::from_column_slice(rows, cols, a));
        *out = loss_projection(&e.projections[k], &p)?;
        Ok(())
    })
}
