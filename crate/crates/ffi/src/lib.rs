//! C ABI over the efdls core.
//!
//! Handles are opaque and owned by the caller once returned; each has a
//! matching `_free`. Every fallible call returns an [`EfdlsStatus`] and, on
//! failure, stores a message retrievable with [`efdls_last_error_message`]
//! on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use efdls::federation::{self, FederationConfig, RunOutcome};
use efdls::metrics::{AccuracyTable, MetricReport};
use efdls::strategies::StrategyKind;
use efdls::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfdlsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Malformed = 5,
    Dataset = 6,
    Runtime = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Parsed run configuration.
pub struct EfdlsConfig {
    inner: FederationConfig,
}

/// Finished federation run.
pub struct EfdlsRun {
    outcome: RunOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> EfdlsStatus {
    match err {
        Error::Config(_) => EfdlsStatus::Config,
        Error::Io { .. } | Error::Stream(_) | Error::Csv(_) | Error::Json(_) => EfdlsStatus::Io,
        Error::Malformed { .. } => EfdlsStatus::Malformed,
        Error::Dataset { .. } | Error::LabelOutOfRange { .. } => EfdlsStatus::Dataset,
        _ => EfdlsStatus::Runtime,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), EfdlsStatus>) -> EfdlsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EfdlsStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_last_error("panic inside efdls");
            EfdlsStatus::Panic
        }
    }
}

fn fail(err: Error) -> EfdlsStatus {
    set_last_error(err.to_string());
    status_of(&err)
}

fn null_check<T>(p: *const T, what: &str) -> Result<(), EfdlsStatus> {
    if p.is_null() {
        set_last_error(format!("{what} is null"));
        Err(EfdlsStatus::NullPointer)
    } else {
        Ok(())
    }
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, EfdlsStatus> {
    null_check(s, what)?;
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_last_error(format!("{what} is not valid UTF-8"));
        EfdlsStatus::InvalidUtf8
    })
}

/// Copies `text` plus a NUL into `buf`. `needed` always receives the full
/// size including the NUL; a short buffer is left untouched.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes; `needed` must be null or writable.
unsafe fn copy_out(text: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), EfdlsStatus> {
    let size = text.len() + 1;
    if !needed.is_null() {
        *needed = size;
    }
    if buf.is_null() || cap < size {
        set_last_error(format!("buffer of {cap} bytes is too small, {size} needed"));
        return Err(EfdlsStatus::BufferTooSmall);
    }
    ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
    *buf.add(text.len()) = 0;
    Ok(())
}

/// Last error message on this thread, or null. Valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn efdls_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a TOML run configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn efdls_config_from_toml(toml: *const c_char, out: *mut *mut EfdlsConfig) -> EfdlsStatus {
    guard(|| {
        null_check(out, "out")?;
        let text = read_str(toml, "toml")?;
        let inner = FederationConfig::from_toml_str(text).map_err(fail)?;
        inner.validate().map_err(fail)?;
        *out = Box::into_raw(Box::new(EfdlsConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn efdls_config_set_seed(cfg: *mut EfdlsConfig, seed: u64) -> EfdlsStatus {
    guard(|| {
        null_check(cfg, "cfg")?;
        (*cfg).inner.seed = seed;
        Ok(())
    })
}

/// Accepts `baseline`, `fedavg`, `fkd` or `efdls`.
///
/// # Safety
/// `cfg` must be a live handle and `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn efdls_config_set_strategy(cfg: *mut EfdlsConfig, name: *const c_char) -> EfdlsStatus {
    guard(|| {
        null_check(cfg, "cfg")?;
        let kind: StrategyKind = read_str(name, "name")?.parse().map_err(fail)?;
        (*cfg).inner.strategy = kind;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn efdls_config_free(cfg: *mut EfdlsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs a federation to completion.
///
/// # Safety
/// `cfg` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn efdls_run(cfg: *const EfdlsConfig, out: *mut *mut EfdlsRun) -> EfdlsStatus {
    guard(|| {
        null_check(cfg, "cfg")?;
        null_check(out, "out")?;
        let outcome = federation::run_federation(&(*cfg).inner).map_err(fail)?;
        *out = Box::into_raw(Box::new(EfdlsRun { outcome }));
        Ok(())
    })
}

/// Mean test accuracy over all users of the run.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn efdls_run_mean_acc(run: *const EfdlsRun, out: *mut f64) -> EfdlsStatus {
    guard(|| {
        null_check(run, "run")?;
        null_check(out, "out")?;
        let report = &(*run).outcome.report;
        let s = report.algorithms.values().next().ok_or_else(|| {
            set_last_error("run report is empty");
            EfdlsStatus::Runtime
        })?;
        *out = s.mean_acc;
        Ok(())
    })
}

/// Bytes moved in both directions over the whole run.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn efdls_run_total_bytes(run: *const EfdlsRun, out: *mut u64) -> EfdlsStatus {
    guard(|| {
        null_check(run, "run")?;
        null_check(out, "out")?;
        *out = (*run).outcome.ledger.total_bytes();
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn efdls_run_n_conn(run: *const EfdlsRun, out: *mut usize) -> EfdlsStatus {
    guard(|| {
        null_check(run, "run")?;
        null_check(out, "out")?;
        *out = (*run).outcome.n_conn;
        Ok(())
    })
}

/// Writes the run's summary JSON. Call with a null `buf` to learn the size.
///
/// # Safety
/// `run` must be a live handle, `buf` null or valid for `cap` bytes, `needed`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn efdls_run_summary_json(
    run: *const EfdlsRun,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> EfdlsStatus {
    guard(|| {
        null_check(run, "run")?;
        let json = (*run).outcome.report.summary_json().map_err(fail)?;
        copy_out(&json, buf, cap, needed)
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn efdls_run_free(run: *mut EfdlsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Renders the summary rows of an accuracy CSV (datasets by algorithms).
///
/// # Safety
/// `path` must be a NUL-terminated string, `buf` null or valid for `cap`
/// bytes, `needed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn efdls_eval_table(
    path: *const c_char,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> EfdlsStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let table = AccuracyTable::from_csv(Path::new(path)).map_err(fail)?;
        let report = MetricReport::from_table(table).map_err(fail)?;
        copy_out(&report.render(), buf, cap, needed)
    })
}

/// Connected-user count for a ratio, rounded half up.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn efdls_n_conn(n_tot: usize, conn_ratio: f64, out: *mut usize) -> EfdlsStatus {
    guard(|| {
        null_check(out, "out")?;
        *out = federation::n_conn_for(n_tot, conn_ratio).map_err(fail)?;
        Ok(())
    })
}

/// Checks that `len` bytes decode as a weight message; reports its epoch and
/// sender.
///
/// # Safety
/// `bytes` must be valid for `len` bytes; `epoch` and `user_id` writable.
#[no_mangle]
pub unsafe extern "C" fn efdls_decode_header(
    bytes: *const u8,
    len: usize,
    epoch: *mut u32,
    user_id: *mut u32,
) -> EfdlsStatus {
    guard(|| {
        null_check(bytes, "bytes")?;
        null_check(epoch, "epoch")?;
        null_check(user_id, "user_id")?;
        let slice = std::slice::from_raw_parts(bytes, len);
        let (_, e, u) = federation::decode_weight_message(slice).map_err(fail)?;
        *epoch = e;
        *user_id = u;
        Ok(())
    })
}
