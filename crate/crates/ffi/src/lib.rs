//! C ABI over the `intervene` library.
//!
//! Models are exposed through the opaque [`IvScm`] handle. Every fallible
//! call returns an [`IvStatus`]; the message of the most recent failure on
//! the calling thread is available from [`iv_last_error`]. Strings handed out
//! by this library must be released with [`iv_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use intervene::config::RunConfig;
use intervene::orchestrator::run_experiment;
use intervene::scm::{build_benchmark_15node, build_benchmark_5node, ScmSpec};
use intervene::{Intervention, OracleScm, ValueRange};

/// Result codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Runtime = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque handle to an oracle structural causal model.
pub struct IvScm {
    scm: OracleScm,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard(f: impl FnOnce() -> IvStatus) -> IvStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            IvStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, IvStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(IvStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        IvStatus::InvalidUtf8
    })
}

/// Message of the last error on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn iv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn iv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// The 5-node benchmark model. Free with [`iv_scm_free`].
#[no_mangle]
pub extern "C" fn iv_scm_benchmark5() -> *mut IvScm {
    Box::into_raw(Box::new(IvScm {
        scm: build_benchmark_5node(),
    }))
}

/// The 15-node benchmark model. Free with [`iv_scm_free`].
#[no_mangle]
pub extern "C" fn iv_scm_benchmark15() -> *mut IvScm {
    Box::into_raw(Box::new(IvScm {
        scm: build_benchmark_15node(),
    }))
}

/// Builds a model from its TOML description and stores the handle in `out`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn iv_scm_from_toml(text: *const c_char, out: *mut *mut IvScm) -> IvStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return IvStatus::NullPointer;
        }
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ScmSpec::from_toml(text).and_then(|spec| OracleScm::from_spec(&spec)) {
            Ok(scm) => {
                *out = Box::into_raw(Box::new(IvScm { scm }));
                IvStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                IvStatus::Config
            }
        }
    })
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `scm` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn iv_scm_n_nodes(scm: *const IvScm) -> usize {
    scm.as_ref().map_or(0, |h| h.scm.graph().n_nodes())
}

/// Draws `n_rows` rows into `out` (row-major, `n_rows * n_nodes` values).
/// `node < 0` samples observationally; otherwise `node` is clamped to
/// `value`, which must lie in [-5, 5].
///
/// # Safety
/// `scm` must be a handle from this library and `out` must point to
/// `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn iv_scm_sample(
    scm: *const IvScm,
    node: i64,
    value: f64,
    n_rows: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> IvStatus {
    guard(|| {
        let Some(h) = scm.as_ref() else {
            set_error("null model handle");
            return IvStatus::NullPointer;
        };
        if out.is_null() {
            set_error("null output buffer");
            return IvStatus::NullPointer;
        }
        let n_nodes = h.scm.graph().n_nodes();
        if out_len < n_rows.saturating_mul(n_nodes) {
            set_error(format!("buffer holds {out_len} values, need {}", n_rows * n_nodes));
            return IvStatus::BufferTooSmall;
        }
        let iv = if node < 0 {
            None
        } else {
            Some(Intervention::new(node as usize, value))
        };
        let mut rng = intervene::rng::from_seed(seed);
        match h.scm.sample(iv, n_rows, ValueRange::default(), &mut rng) {
            Ok(ds) => {
                let dst = std::slice::from_raw_parts_mut(out, n_rows * n_nodes);
                for r in 0..n_rows {
                    for c in 0..n_nodes {
                        dst[r * n_nodes + c] = ds.get(r, c);
                    }
                }
                IvStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                IvStatus::InvalidArgument
            }
        }
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `scm` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn iv_scm_free(scm: *mut IvScm) {
    if !scm.is_null() {
        drop(Box::from_raw(scm));
    }
}

/// Runs an experiment described by a TOML run configuration and stores the
/// per-seed results and summary as a JSON string in `out_json`.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out_json` a valid
/// pointer. The returned string must be released with [`iv_string_free`].
#[no_mangle]
pub unsafe extern "C" fn iv_run_experiment(config_toml: *const c_char, out_json: *mut *mut c_char) -> IvStatus {
    guard(|| {
        if out_json.is_null() {
            set_error("null output pointer");
            return IvStatus::NullPointer;
        }
        let text = match read_str(config_toml) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg = match RunConfig::from_toml(text) {
            Ok(c) => c,
            Err(e) => {
                set_error(e.to_string());
                return IvStatus::Config;
            }
        };
        let exp = match run_experiment(&cfg) {
            Ok(x) => x,
            Err(e) => {
                set_error(e.to_string());
                return match e {
                    intervene::Error::UnknownPolicy(_)
                    | intervene::Error::UnknownEnvironment(_)
                    | intervene::Error::Config(_) => IvStatus::Config,
                    _ => IvStatus::Runtime,
                };
            }
        };
        let results: Vec<_> = exp.runs.iter().map(|r| &r.result).collect();
        let json = serde_json::json!({ "results": results, "summary": exp.summary });
        match CString::new(json.to_string()) {
            Ok(s) => {
                *out_json = s.into_raw();
                IvStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                IvStatus::Runtime
            }
        }
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn iv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
