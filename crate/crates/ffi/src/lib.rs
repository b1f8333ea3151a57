//! C ABI for loading a trained checkpoint and forecasting from it.
//!
//! Every fallible function returns a status code (`TIMEEMB_OK` on success).
//! The message of the last failure on the calling thread is available from
//! `timeemb_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use timeemb::model::{parameter_count, Checkpoint};
use timeemb::numcore::RealArray;
use timeemb::{verify, Error};

pub const TIMEEMB_OK: i32 = 0;
pub const TIMEEMB_ERR_NULL: i32 = 1;
pub const TIMEEMB_ERR_UTF8: i32 = 2;
pub const TIMEEMB_ERR_IO: i32 = 3;
pub const TIMEEMB_ERR_FORMAT: i32 = 4;
pub const TIMEEMB_ERR_DIMENSION: i32 = 5;
pub const TIMEEMB_ERR_NUMERIC: i32 = 6;
pub const TIMEEMB_ERR_CONFIG: i32 = 7;
pub const TIMEEMB_ERR_VERIFY: i32 = 8;
pub const TIMEEMB_ERR_PANIC: i32 = 99;

/// Opaque handle to a loaded model and its data scaler.
pub struct TimeembModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => TIMEEMB_ERR_IO,
        Error::Format { .. } | Error::Parse { .. } | Error::Serde(_) => TIMEEMB_ERR_FORMAT,
        Error::Dimension(_) => TIMEEMB_ERR_DIMENSION,
        Error::Numeric { .. } => TIMEEMB_ERR_NUMERIC,
        Error::Config { .. } | Error::Data(_) | Error::Invariant(_) | Error::Contract(_) => TIMEEMB_ERR_CONFIG,
    }
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TIMEEMB_OK,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            TIMEEMB_ERR_PANIC
        }
    }
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(Failure(TIMEEMB_ERR_NULL, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(TIMEEMB_ERR_UTF8, format!("{what} is not valid UTF-8")))
}

fn boxed(checkpoint: Checkpoint, out: *mut *mut TimeembModel) {
    unsafe { *out = Box::into_raw(Box::new(TimeembModel { checkpoint })) };
}

/// Loads a checkpoint file. On success `*out` owns a handle to release with `timeemb_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn timeemb_model_load(path: *const c_char, out: *mut *mut TimeembModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(Failure(TIMEEMB_ERR_NULL, "out is null".into()));
        }
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        boxed(Checkpoint::load(Path::new(path))?, out);
        Ok(())
    })
}

/// Like `timeemb_model_load`, from checkpoint JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn timeemb_model_from_json(json: *const c_char, out: *mut *mut TimeembModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(Failure(TIMEEMB_ERR_NULL, "out is null".into()));
        }
        *out = ptr::null_mut();
        let json = c_str(json, "json")?;
        boxed(Checkpoint::from_json(json)?, out);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from a load function and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn timeemb_model_free(model: *mut TimeembModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Lookback `L`, horizon `H` and channel count `D`. Any out pointer may be null.
///
/// # Safety
/// `model` must be a live handle; non-null out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn timeemb_model_shape(
    model: *const TimeembModel,
    lookback: *mut usize,
    horizon: *mut usize,
    channels: *mut usize,
) -> i32 {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| Failure(TIMEEMB_ERR_NULL, "model is null".into()))?;
        let cfg = &m.checkpoint.model.config;
        for (p, v) in [(lookback, cfg.lookback), (horizon, cfg.horizon), (channels, cfg.channels)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Trainable parameter count, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn timeemb_model_param_count(model: *const TimeembModel) -> usize {
    model.as_ref().map_or(0, |m| parameter_count(&m.checkpoint.model.config))
}

/// Forecasts `H × D` values into `out` (row-major, time-major) from an `L × D`
/// window ending at global step `t_last`. When the checkpoint stores a scaler
/// and `raw_units` is non-zero, input and output are in the original data units.
///
/// # Safety
/// `window` must point to `window_len` doubles and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn timeemb_model_predict(
    model: *const TimeembModel,
    window: *const f64,
    window_len: usize,
    t_last: u64,
    raw_units: i32,
    out: *mut f64,
    out_len: usize,
) -> i32 {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| Failure(TIMEEMB_ERR_NULL, "model is null".into()))?;
        if window.is_null() || out.is_null() {
            return Err(Failure(TIMEEMB_ERR_NULL, "window or out is null".into()));
        }
        let cfg = &m.checkpoint.model.config;
        let (l, h, d) = (cfg.lookback, cfg.horizon, cfg.channels);
        if window_len != l * d || out_len != h * d {
            return Err(Failure(
                TIMEEMB_ERR_DIMENSION,
                format!("expected window of {} and out of {} values, got {window_len} and {out_len}", l * d, h * d),
            ));
        }
        let mut x = RealArray::from_vec(&[l, d], std::slice::from_raw_parts(window, window_len).to_vec())?;
        let scaler = m.checkpoint.scaler.as_ref().filter(|_| raw_units != 0);
        if let Some(s) = scaler {
            x = s.apply(&x);
        }
        let mut y = m.checkpoint.model.forecast(&x, t_last)?;
        if let Some(s) = scaler {
            y = s.invert(&y);
        }
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(y.data());
        Ok(())
    })
}

/// Runs the transform identities and gradient checks; `TIMEEMB_ERR_VERIFY` if any fails.
#[no_mangle]
pub extern "C" fn timeemb_verify(seed: u64) -> i32 {
    guard(|| {
        let report = verify::run_suite(seed, false)?;
        if report.passed() {
            Ok(())
        } else {
            Err(Failure(TIMEEMB_ERR_VERIFY, report.render()))
        }
    })
}

/// Message of the last failure on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn timeemb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
