//! C interface to the dpsoc pipeline.
//!
//! Every function returns a [`DpsocStatus`]; on failure the message is kept
//! per thread and read with [`dpsoc_last_error_message`]. Handles are opaque
//! and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dpsoc::duality::{free_energy, relative_entropy, FiniteMeasureSpace};
use dpsoc::pipeline::{run_pipeline_with, RunConfig, RunRecord};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpsocStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    RunFailed = 4,
    Serialization = 5,
    Panic = 6,
}

/// Parsed run configuration.
pub struct DpsocConfig {
    inner: RunConfig,
}

/// Result of a pipeline run.
pub struct DpsocRecord {
    inner: RunRecord,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard(f: impl FnOnce() -> Result<(), (DpsocStatus, String)>) -> DpsocStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpsocStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside dpsoc");
            DpsocStatus::Panic
        }
    }
}

fn null(what: &str) -> (DpsocStatus, String) {
    (DpsocStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (DpsocStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| (DpsocStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn read_slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], (DpsocStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Parse a configuration. Text starting with `{` is read as JSON, anything
/// else as TOML.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_config_from_str(text: *const c_char, out: *mut *mut DpsocConfig) -> DpsocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = read_str(text, "text")?;
        let cfg = if s.trim_start().starts_with('{') {
            RunConfig::from_json_str(s)
        } else {
            RunConfig::from_toml_str(s)
        }
        .map_err(|e| (DpsocStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(DpsocConfig { inner: cfg }));
        Ok(())
    })
}

/// Built-in default configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_config_default(out: *mut *mut DpsocConfig) -> DpsocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(DpsocConfig {
            inner: RunConfig::default(),
        }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_config_set_seed(cfg: *mut DpsocConfig, seed: u64) -> DpsocStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("config"))?;
        c.inner.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library and not be used afterwards. Null is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_config_free(cfg: *mut DpsocConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Run the pipeline. A failed stage or certificate still yields a record;
/// check it with [`dpsoc_record_passed`].
///
/// # Safety
/// `cfg` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_run_pipeline(
    cfg: *const DpsocConfig,
    baseline_only: bool,
    out: *mut *mut DpsocRecord,
) -> DpsocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let c = cfg.as_ref().ok_or_else(|| null("config"))?;
        let mut rc = c.inner.clone();
        if baseline_only {
            rc = rc.baseline_only();
        }
        let run = run_pipeline_with(&rc, baseline_only).map_err(|e| (DpsocStatus::RunFailed, e.to_string()))?;
        *out = Box::into_raw(Box::new(DpsocRecord { inner: run.record }));
        Ok(())
    })
}

/// Serialize a record as JSON; release the string with [`dpsoc_string_free`].
///
/// # Safety
/// `rec` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_record_to_json(rec: *const DpsocRecord, out: *mut *mut c_char) -> DpsocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let r = rec.as_ref().ok_or_else(|| null("record"))?;
        let json = r.inner.to_json().map_err(|e| (DpsocStatus::Serialization, e.to_string()))?;
        let c = CString::new(json).map_err(|e| (DpsocStatus::Serialization, e.to_string()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Mean evaluated cost of the final policy, or of the baseline when the run
/// had no EM phase.
///
/// # Safety
/// `rec` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_record_final_cost(rec: *const DpsocRecord, out: *mut f64) -> DpsocStatus {
    guard(|| {
        let r = rec.as_ref().ok_or_else(|| null("record"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let ev = r.inner.final_eval.as_ref().or(r.inner.baseline_eval.as_ref()).ok_or_else(|| {
            (
                DpsocStatus::RunFailed,
                "record has no evaluation".to_string(),
            )
        })?;
        *out = ev.cost.mean;
        Ok(())
    })
}

/// Whether every stage completed and every certificate held.
///
/// # Safety
/// `rec` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_record_passed(rec: *const DpsocRecord, out: *mut bool) -> DpsocStatus {
    guard(|| {
        let r = rec.as_ref().ok_or_else(|| null("record"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = r.inner.passed();
        Ok(())
    })
}

/// # Safety
/// `rec` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_record_iteration_count(rec: *const DpsocRecord, out: *mut usize) -> DpsocStatus {
    guard(|| {
        let r = rec.as_ref().ok_or_else(|| null("record"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = r.inner.iterations.len();
        Ok(())
    })
}

/// # Safety
/// `rec` must come from this library and not be used afterwards. Null is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_record_free(rec: *mut DpsocRecord) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// `(1/ρ) log Σ_i p_i exp(ρ j_i)` over `n` atoms.
///
/// # Safety
/// `p` and `j` must point to `n` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_free_energy(
    p: *const f64,
    j: *const f64,
    n: usize,
    rho: f64,
    out: *mut f64,
) -> DpsocStatus {
    guard(|| {
        let p = read_slice(p, n, "p")?;
        let j = read_slice(j, n, "j")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let sp = FiniteMeasureSpace::new(p.to_vec(), j.to_vec(), rho)
            .map_err(|e| (DpsocStatus::InvalidArgument, e.to_string()))?;
        *out = free_energy(&sp).map_err(|e| (DpsocStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// `KL(q || p)`; infinite when `q` charges an atom `p` does not.
///
/// # Safety
/// `q` and `p` must point to `n` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpsoc_relative_entropy(q: *const f64, p: *const f64, n: usize, out: *mut f64) -> DpsocStatus {
    guard(|| {
        let q = read_slice(q, n, "q")?;
        let p = read_slice(p, n, "p")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = relative_entropy(q, p).map_err(|e| (DpsocStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dpsoc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
