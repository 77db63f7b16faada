//! C ABI over `trace-kit`.
//!
//! Every function returns a [`TkStatus`]; results travel through out
//! pointers. On failure the message is available from
//! [`tk_last_error_message`] on the same thread until the next call.
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Panics never cross the boundary; they are
//! reported as `TK_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::ArrayView2;
use trace_kit::config::RunConfig;
use trace_kit::datasets::{load_features, Dataset, FileFormat};
use trace_kit::diagnostics::{label_noise_remainder, validation_set_error};
use trace_kit::kernels::{mmd, mmd_concentration, Bandwidth, KernelConfig, MmdEstimator};
use trace_kit::models::{Model, Predictor};
use trace_kit::sensitivity::dkw_band;
use trace_kit::transport::{population_residual, sinkhorn_divergence, TransportConfig};
use trace_kit::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TkStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument or configuration value is out of range or inconsistent.
    InvalidArgument = 2,
    /// An input file or JSON string is malformed.
    ParseError = 3,
    IoError = 4,
    /// A computation failed (divergence, non-finite value, ...).
    NumericError = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// A labeled classification sample.
pub struct TkDataset {
    inner: Dataset,
}

/// A trained predictor.
pub struct TkPredictor {
    inner: Predictor,
}

struct Failure {
    status: TkStatus,
    message: String,
}

impl Failure {
    fn new(status: TkStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }

    fn null(name: &str) -> Self {
        Failure::new(TkStatus::NullPointer, format!("`{name}` is null"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } | Error::Validation { .. } | Error::Json(_) | Error::Csv(_) => {
                TkStatus::ParseError
            }
            Error::Io(_) | Error::File { .. } => TkStatus::IoError,
            Error::Numeric(_) | Error::TrainingDiverged { .. } | Error::Assembly { .. } => {
                TkStatus::NumericError
            }
            _ => TkStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    // Interior NULs cannot be represented; they are replaced.
    let c = CString::new(message.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> TkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            TkStatus::Ok
        }
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            TkStatus::Panic
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, name: &str) -> FfiResult<&'a str> {
    if ptr.is_null() {
        return Err(Failure::null(name));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        Failure::new(
            TkStatus::InvalidArgument,
            format!("`{name}` is not valid UTF-8"),
        )
    })
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn matrix<'a>(
    ptr: *const f64,
    rows: usize,
    cols: usize,
    name: &str,
) -> FfiResult<ArrayView2<'a, f64>> {
    let len = rows.checked_mul(cols).ok_or_else(|| {
        Failure::new(
            TkStatus::InvalidArgument,
            format!("`{name}` shape overflows"),
        )
    })?;
    let data = slice(ptr, len, name)?;
    ArrayView2::from_shape((rows, cols), data)
        .map_err(|e| Failure::new(TkStatus::InvalidArgument, e.to_string()))
}

unsafe fn write<T>(out: *mut T, value: T, name: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn handle<'a, T>(ptr: *const T, name: &str) -> FfiResult<&'a T> {
    ptr.as_ref().ok_or_else(|| Failure::null(name))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn tk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset from a `.csv` or `.json` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_dataset_load(
    path: *const c_char,
    out: *mut *mut TkDataset,
) -> TkStatus {
    guard(|| {
        let path = Path::new(text(path, "path")?);
        let ds = load_features(path, FileFormat::from_path(path), None)?;
        write(out, boxed(TkDataset { inner: ds }), "out")
    })
}

/// Builds a dataset from a row-major `rows × cols` feature buffer and
/// `rows` labels in `0..class_count`.
///
/// # Safety
/// `features` must hold `rows·cols` values and `labels` `rows` values.
#[no_mangle]
pub unsafe extern "C" fn tk_dataset_from_rows(
    features: *const f64,
    rows: usize,
    cols: usize,
    labels: *const usize,
    class_count: usize,
    out: *mut *mut TkDataset,
) -> TkStatus {
    guard(|| {
        let x = matrix(features, rows, cols, "features")?.to_owned();
        let y = slice(labels, rows, "labels")?.to_vec();
        let ds = Dataset::new(x, y, class_count)?;
        write(out, boxed(TkDataset { inner: ds }), "out")
    })
}

/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_dataset_rows(ds: *const TkDataset, out: *mut usize) -> TkStatus {
    guard(|| write(out, handle(ds, "ds")?.inner.len(), "out"))
}

/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_dataset_cols(ds: *const TkDataset, out: *mut usize) -> TkStatus {
    guard(|| write(out, handle(ds, "ds")?.inner.dim(), "out"))
}

/// Releases a dataset. Null is a no-op.
///
/// # Safety
/// `ds` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tk_dataset_free(ds: *mut TkDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Loads a predictor from a JSON model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_predictor_load(
    path: *const c_char,
    out: *mut *mut TkPredictor,
) -> TkStatus {
    guard(|| {
        let p = Predictor::load(Path::new(text(path, "path")?))?;
        write(out, boxed(TkPredictor { inner: p }), "out")
    })
}

/// Parses a predictor from its JSON serialization.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_predictor_from_json(
    json: *const c_char,
    out: *mut *mut TkPredictor,
) -> TkStatus {
    guard(|| {
        let p = Predictor::from_json(text(json, "json")?)?;
        write(out, boxed(TkPredictor { inner: p }), "out")
    })
}

/// Number of logits per input.
///
/// # Safety
/// `p` must be a live predictor handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_predictor_outputs(p: *const TkPredictor, out: *mut usize) -> TkStatus {
    guard(|| write(out, handle(p, "p")?.inner.output_dim(), "out"))
}

/// Clipped logits of `rows` row-major inputs of width `cols`, written
/// row-major into `out`, which must hold `rows·outputs` values.
///
/// # Safety
/// Buffers must have the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tk_predictor_forward(
    p: *const TkPredictor,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> TkStatus {
    guard(|| {
        let p = &handle(p, "p")?.inner;
        let x = matrix(x, rows, cols, "x")?;
        let z = p.logits_batch(x)?;
        if out_len != z.len() {
            return Err(Failure::new(
                TkStatus::InvalidArgument,
                format!(
                    "`out_len` is {out_len}, forward produced {} values",
                    z.len()
                ),
            ));
        }
        if z.is_empty() {
            return Ok(());
        }
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        std::slice::from_raw_parts_mut(out, out_len)
            .copy_from_slice(z.as_standard_layout().as_slice().unwrap());
        Ok(())
    })
}

/// Releases a predictor. Null is a no-op.
///
/// # Safety
/// `p` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tk_predictor_free(p: *mut TkPredictor) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Debiased Sinkhorn divergence between two row-major clouds of width
/// `dim` with squared Euclidean ground cost.
///
/// # Safety
/// `a` must hold `na·dim` values and `b` `nb·dim`.
#[no_mangle]
pub unsafe extern "C" fn tk_sinkhorn_divergence(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    dim: usize,
    epsilon: f64,
    iterations: usize,
    out: *mut f64,
) -> TkStatus {
    guard(|| {
        let cfg = TransportConfig {
            epsilon,
            iterations,
            ..Default::default()
        };
        let v = sinkhorn_divergence(matrix(a, na, dim, "a")?, matrix(b, nb, dim, "b")?, &cfg)?;
        write(out, v, "out")
    })
}

/// RBF-kernel MMD between two clouds. A non-positive `bandwidth` selects
/// the median heuristic. Writes `sqrt(max(0, MMD²))`.
///
/// # Safety
/// `a` must hold `na·dim` values and `b` `nb·dim`.
#[no_mangle]
pub unsafe extern "C" fn tk_mmd(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    dim: usize,
    bandwidth: f64,
    unbiased: bool,
    out: *mut f64,
) -> TkStatus {
    guard(|| {
        let mut cfg = KernelConfig::default();
        if bandwidth > 0.0 {
            cfg.bandwidth = Bandwidth::Fixed(bandwidth);
        }
        cfg.mmd_estimator = if unbiased {
            MmdEstimator::Unbiased
        } else {
            MmdEstimator::Biased
        };
        let v = mmd(matrix(a, na, dim, "a")?, matrix(b, nb, dim, "b")?, &cfg)?;
        write(out, v.mmd, "out")
    })
}

/// `2M·sqrt(ln(4/δ)/(2n))`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_label_noise_remainder(
    n: usize,
    m_bound: f64,
    delta: f64,
    out: *mut f64,
) -> TkStatus {
    guard(|| write(out, label_noise_remainder(n, m_bound, delta)?, "out"))
}

/// `M·(sqrt(ln(2/η)/(2m)) + sqrt(ln(2/η)/(2m̃)))`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_validation_set_error(
    m_bound: f64,
    m: usize,
    m_tilde: usize,
    eta: f64,
    out: *mut f64,
) -> TkStatus {
    guard(|| write(out, validation_set_error(m_bound, m, m_tilde, eta)?, "out"))
}

/// `sqrt(ln(2/η)/(2m))`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_dkw_band(m: usize, eta: f64, out: *mut f64) -> TkStatus {
    guard(|| write(out, dkw_band(m, eta)?, "out"))
}

/// `C_X·(ln(4/δ)/n)^{1/max(d,2)}`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_population_residual(
    n: usize,
    dim: usize,
    c_x: f64,
    delta: f64,
    out: *mut f64,
) -> TkStatus {
    guard(|| write(out, population_residual(n, dim, c_x, delta)?, "out"))
}

/// `C_κ·sqrt(ln(2/δ)/n)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_mmd_concentration(
    n: usize,
    c_kappa: f64,
    delta: f64,
    out: *mut f64,
) -> TkStatus {
    guard(|| write(out, mmd_concentration(n, c_kappa, delta)?, "out"))
}

/// Runs the full diagnostic and returns the report as JSON in `out`,
/// released with [`tk_string_free`]. `test` (labeled anchor sample for the
/// true risk change) and `config_json` (a run configuration) may be null.
///
/// # Safety
/// Handles must be live; `config_json`, when non-null, NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tk_diagnose_json(
    q: *const TkPredictor,
    qt: *const TkPredictor,
    source: *const TkDataset,
    target: *const TkDataset,
    test: *const TkDataset,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> TkStatus {
    guard(|| {
        let cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_json(text(config_json, "config_json")?)?
        };
        let test = test.as_ref().map(|t| &t.inner);
        let report = cfg.diagnose_datasets(
            &handle(source, "source")?.inner,
            &handle(target, "target")?.inner,
            &handle(q, "q")?.inner,
            &handle(qt, "qt")?.inner,
            test,
        )?;
        let json = serde_json::to_string(&report).map_err(Error::from)?;
        let c =
            CString::new(json).map_err(|e| Failure::new(TkStatus::NumericError, e.to_string()))?;
        write(out, c.into_raw(), "out")
    })
}
