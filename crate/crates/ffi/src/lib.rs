//! C ABI over the prunelab engine.
//!
//! Models and statistics cross the boundary as opaque heap handles that the
//! caller releases with the matching `*_free` function. Every fallible call
//! returns a status code; on failure a description is stored per thread and
//! can be read with [`prunelab_last_error`]. Panics never unwind into C.
//!
//! The declarations are mirrored by hand in `include/prunelab.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use prunelab::calibration::{self, CalibParams, CalibStats};
use prunelab::model::{self, ModelCheckpoint, ModelConfig, TrainHyper};
use prunelab::pruning::{self, Granularity, Method, PruneParams, SparsityLevel};
use prunelab::Error;

pub const PRUNELAB_OK: i32 = 0;
pub const PRUNELAB_ERR_NULL_POINTER: i32 = 1;
pub const PRUNELAB_ERR_INVALID_ARGUMENT: i32 = 2;
pub const PRUNELAB_ERR_IO: i32 = 3;
pub const PRUNELAB_ERR_FORMAT: i32 = 4;
pub const PRUNELAB_ERR_NUMERIC: i32 = 5;
pub const PRUNELAB_ERR_PANIC: i32 = 6;

pub const PRUNELAB_GRANULARITY_DEFAULT: i32 = -1;
pub const PRUNELAB_GRANULARITY_PER_LAYER: i32 = 0;
pub const PRUNELAB_GRANULARITY_PER_ROW: i32 = 1;

/// Opaque trained or pruned model.
pub struct PrunelabModel(ModelCheckpoint);

/// Opaque calibration statistics.
pub struct PrunelabStats(CalibStats);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    // Interior NULs would truncate the message; replace them.
    let msg = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> i32 {
    match err {
        Error::Cell { source, .. } => status_of(source),
        Error::Io { .. } => PRUNELAB_ERR_IO,
        Error::Version(_) | Error::Header(_) | Error::Truncated(_) | Error::Json(_) | Error::Csv(_) => {
            PRUNELAB_ERR_FORMAT
        }
        Error::NonFinite(_) | Error::NotPositiveDefinite { .. } => PRUNELAB_ERR_NUMERIC,
        _ => PRUNELAB_ERR_INVALID_ARGUMENT,
    }
}

/// A failure carried to the boundary: status code plus message.
struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PRUNELAB_ERR_NULL_POINTER, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PRUNELAB_ERR_INVALID_ARGUMENT, msg.into())
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PRUNELAB_OK
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            PRUNELAB_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize, what: &str) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn granularity(code: i32) -> Result<Option<Granularity>, Failure> {
    match code {
        PRUNELAB_GRANULARITY_DEFAULT => Ok(None),
        PRUNELAB_GRANULARITY_PER_LAYER => Ok(Some(Granularity::PerLayer)),
        PRUNELAB_GRANULARITY_PER_ROW => Ok(Some(Granularity::PerRow)),
        other => Err(invalid(format!("unknown granularity code {other}"))),
    }
}

/// Message for the last failed call on this thread, or NULL after a
/// success. Valid until the next prunelab call on the same thread.
#[no_mangle]
pub extern "C" fn prunelab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn prunelab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prunelab_model_load(path: *const c_char, out: *mut *mut PrunelabModel) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ckpt = model::load_checkpoint(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PrunelabModel(ckpt)));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live model handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn prunelab_model_save(m: *const PrunelabModel, path: *const c_char) -> i32 {
    guard(|| {
        let m = ref_arg(m, "model")?;
        model::save_checkpoint(&m.0, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Release a model handle. NULL is ignored.
///
/// # Safety
/// `m` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn prunelab_model_free(m: *mut PrunelabModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Train a default-shaped model on `corpus` with the given seed and step
/// count, batch 16 and learning rate 1e-3.
///
/// # Safety
/// `corpus` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prunelab_train(
    corpus: *const u8,
    len: usize,
    seed: u64,
    steps: usize,
    out: *mut *mut PrunelabModel,
) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let corpus = bytes_arg(corpus, len, "corpus")?;
        let hyper = TrainHyper {
            steps,
            ..TrainHyper::default()
        };
        let ckpt = model::train(&ModelConfig::default().with_seed(seed), corpus, &hyper)?;
        *out = Box::into_raw(Box::new(PrunelabModel(ckpt)));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle, `corpus` must point to `len` readable bytes
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prunelab_perplexity(
    m: *const PrunelabModel,
    corpus: *const u8,
    len: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let m = ref_arg(m, "model")?;
        let out = out_arg(out, "out")?;
        *out = model::perplexity(&m.0, bytes_arg(corpus, len, "corpus")?)?;
        Ok(())
    })
}

/// Collect calibration statistics with `samples` activation windows and
/// default movement settings.
///
/// # Safety
/// `m` must be a live handle, `corpus` must point to `len` readable bytes
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prunelab_stats_collect(
    m: *const PrunelabModel,
    corpus: *const u8,
    len: usize,
    samples: usize,
    out: *mut *mut PrunelabStats,
) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = ref_arg(m, "model")?;
        let params = CalibParams {
            samples,
            ..CalibParams::default()
        };
        let stats = calibration::collect(&m.0, bytes_arg(corpus, len, "corpus")?, &params)?;
        *out = Box::into_raw(Box::new(PrunelabStats(stats)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prunelab_stats_load(path: *const c_char, out: *mut *mut PrunelabStats) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let stats = calibration::load_stats(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PrunelabStats(stats)));
        Ok(())
    })
}

/// # Safety
/// `s` must be a live stats handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn prunelab_stats_save(s: *const PrunelabStats, path: *const c_char) -> i32 {
    guard(|| {
        let s = ref_arg(s, "stats")?;
        calibration::save_stats(&s.0, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Release a stats handle. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn prunelab_stats_free(s: *mut PrunelabStats) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Prune a copy of `m`. `stats` may be NULL for magnitude and
/// neg_magnitude. `granularity` is one of the `PRUNELAB_GRANULARITY_*`
/// codes; `redistribute` is a boolean.
///
/// # Safety
/// `m` must be a live handle, `stats` NULL or a live handle, `method` a
/// NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn prunelab_prune(
    m: *const PrunelabModel,
    stats: *const PrunelabStats,
    method: *const c_char,
    level: f64,
    granularity_code: i32,
    lambda: f64,
    redistribute: i32,
    out: *mut *mut PrunelabModel,
) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = ref_arg(m, "model")?;
        let method: Method = str_arg(method, "method")?.parse()?;
        let level = SparsityLevel::new(level)?;
        let params = PruneParams {
            lambda,
            redistribute: redistribute != 0,
            ..PruneParams::default()
        };
        let stats = stats.as_ref().map(|s| &s.0);
        let (pruned, _) = pruning::prune_model(&m.0, method, level, granularity(granularity_code)?, stats, &params)?;
        *out = Box::into_raw(Box::new(PrunelabModel(pruned)));
        Ok(())
    })
}

/// Zero fraction over the model's prunable matrices.
///
/// # Safety
/// `m` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn prunelab_model_sparsity(m: *const PrunelabModel, out: *mut f64) -> i32 {
    guard(|| {
        let m = ref_arg(m, "model")?;
        let out = out_arg(out, "out")?;
        let set = m.0.prunable_set();
        let (zeros, numel) = set.indices().iter().fold((0, 0), |(z, n), &i| {
            let v = &m.0.tensors()[i].value;
            (z + v.count_zeros(), n + v.len())
        });
        *out = zeros as f64 / numel as f64;
        Ok(())
    })
}
