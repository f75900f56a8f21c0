//! C ABI over the cordex library: opaque handles, status codes, and a
//! thread-local last-error message.
//!
//! Conventions:
//!
//! - Every fallible call returns a [`CordexStatus`]; `CORDEX_STATUS_OK` is 0.
//! - On failure, `cordex_last_error_message` returns a UTF-8 message valid
//!   until the next failing call on the same thread.
//! - Out-parameters are written only on success.
//! - Handles from `cordex_config_*` constructors are freed with
//!   `cordex_config_free`; strings returned as `char*` are freed with
//!   `cordex_string_free`. Nothing else transfers ownership.
//! - No call unwinds across the boundary; panics become
//!   `CORDEX_STATUS_RUNTIME_ERROR`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cordex::config::RunConfig;
use cordex::coverage;
use cordex::harness;

/// Result codes for every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CordexStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Utf8Error = 3,
    JsonError = 4,
    IoError = 5,
    RuntimeError = 6,
}

/// Opaque run configuration handle.
pub struct CordexConfig {
    inner: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', "?"))
        .unwrap_or_else(|_| CString::new("invalid error message").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn status_of(err: &cordex::Error) -> CordexStatus {
    match err {
        cordex::Error::Config(_) | cordex::Error::Range(_) => CordexStatus::InvalidArgument,
        cordex::Error::Json(_) | cordex::Error::Format(_) => CordexStatus::JsonError,
        cordex::Error::Io(_) => CordexStatus::IoError,
        _ => CordexStatus::RuntimeError,
    }
}

fn fail(err: cordex::Error) -> CordexStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Runs a closure, converting panics into `RuntimeError`.
fn guarded<F: FnOnce() -> CordexStatus>(f: F) -> CordexStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in cordex".to_string());
            set_error(message);
            CordexStatus::RuntimeError
        }
    }
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, CordexStatus> {
    if ptr.is_null() {
        set_error("null string argument".into());
        return Err(CordexStatus::NullPointer);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error("argument is not valid UTF-8".into());
        CordexStatus::Utf8Error
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cordex_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread, or NULL if none.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cordex_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |msg| msg.as_ptr())
    })
}

/// Builds a configuration from an environment name (`push_box`,
/// `secret_room`, `coop_nav`) and profile (`desk` or `paper`).
#[no_mangle]
pub extern "C" fn cordex_config_default(
    env_name: *const c_char,
    profile: *const c_char,
    out: *mut *mut CordexConfig,
) -> CordexStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer".into());
            return CordexStatus::NullPointer;
        }
        let env_name = match unsafe { cstr_arg(env_name) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let profile = match unsafe { cstr_arg(profile) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let env = match env_name.parse() {
            Ok(env) => env,
            Err(err) => return fail(err),
        };
        let config = match profile {
            "desk" => RunConfig::desk(env),
            "paper" => RunConfig::defaults_for(env),
            other => {
                set_error(format!("unknown profile {other:?}; expected desk or paper"));
                return CordexStatus::InvalidArgument;
            }
        };
        let handle = Box::new(CordexConfig { inner: config });
        unsafe { *out = Box::into_raw(handle) };
        CordexStatus::Ok
    })
}

/// Parses a configuration from its JSON form.
#[no_mangle]
pub extern "C" fn cordex_config_from_json(
    json: *const c_char,
    out: *mut *mut CordexConfig,
) -> CordexStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer".into());
            return CordexStatus::NullPointer;
        }
        let json = match unsafe { cstr_arg(json) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match RunConfig::from_json(json) {
            Ok(config) => {
                unsafe { *out = Box::into_raw(Box::new(CordexConfig { inner: config })) };
                CordexStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Serializes a configuration to JSON; free the result with
/// `cordex_string_free`.
#[no_mangle]
pub extern "C" fn cordex_config_to_json(
    config: *const CordexConfig,
    out: *mut *mut c_char,
) -> CordexStatus {
    guarded(|| {
        if config.is_null() || out.is_null() {
            set_error("null pointer".into());
            return CordexStatus::NullPointer;
        }
        let config = unsafe { &*config };
        let json = config.inner.to_json_pretty();
        match CString::new(json) {
            Ok(s) => {
                unsafe { *out = s.into_raw() };
                CordexStatus::Ok
            }
            Err(_) => {
                set_error("config JSON contained a NUL byte".into());
                CordexStatus::RuntimeError
            }
        }
    })
}

#[no_mangle]
pub extern "C" fn cordex_config_set_seed(config: *mut CordexConfig, seed: u64) -> CordexStatus {
    guarded(|| {
        if config.is_null() {
            set_error("null config".into());
            return CordexStatus::NullPointer;
        }
        unsafe { &mut *config }.inner.seed = seed;
        CordexStatus::Ok
    })
}

/// Frees a configuration handle; NULL is a no-op.
#[no_mangle]
pub extern "C" fn cordex_config_free(config: *mut CordexConfig) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

/// Frees a string returned by this library; NULL is a no-op.
#[no_mangle]
pub extern "C" fn cordex_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Trains per the config, writing metrics.csv and checkpoint.json under
/// `out_dir`. On success writes the final evaluation's team return and
/// success rate to the out-parameters.
#[no_mangle]
pub extern "C" fn cordex_train(
    config: *const CordexConfig,
    out_dir: *const c_char,
    out_team_return: *mut f64,
    out_success_rate: *mut f64,
) -> CordexStatus {
    guarded(|| {
        if config.is_null() {
            set_error("null config".into());
            return CordexStatus::NullPointer;
        }
        let out_dir = match unsafe { cstr_arg(out_dir) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let config = unsafe { &*config };
        match harness::train(&config.inner, Path::new(out_dir)) {
            Ok(outcome) => {
                let last = outcome.rows.last();
                if !out_team_return.is_null() {
                    unsafe { *out_team_return = last.map_or(f64::NAN, |r| r.team_return) };
                }
                if !out_success_rate.is_null() {
                    unsafe { *out_success_rate = last.map_or(f64::NAN, |r| r.success_rate) };
                }
                CordexStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Evaluates a checkpoint with deterministic rollouts.
#[no_mangle]
pub extern "C" fn cordex_evaluate(
    checkpoint_path: *const c_char,
    episodes: u64,
    seed: u64,
    out_team_return: *mut f64,
    out_success_rate: *mut f64,
) -> CordexStatus {
    guarded(|| {
        let path = match unsafe { cstr_arg(checkpoint_path) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        if episodes == 0 {
            set_error("episodes must be positive".into());
            return CordexStatus::InvalidArgument;
        }
        match harness::evaluate(Path::new(path), episodes as usize, seed) {
            Ok(row) => {
                if !out_team_return.is_null() {
                    unsafe { *out_team_return = row.team_return };
                }
                if !out_success_rate.is_null() {
                    unsafe { *out_success_rate = row.success_rate };
                }
                CordexStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Analytic expected steps to cover all `L^n` joint action configurations.
#[no_mangle]
pub extern "C" fn cordex_expected_coverage_time(
    n_agents: u32,
    actions_per_agent: u32,
    out: *mut f64,
) -> CordexStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer".into());
            return CordexStatus::NullPointer;
        }
        match coverage::expected_coverage_time(n_agents, actions_per_agent) {
            Ok(value) => {
                unsafe { *out = value };
                CordexStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Monte-Carlo coverage time; writes the empirical mean and standard
/// deviation over `trials` seeded trials.
#[no_mangle]
pub extern "C" fn cordex_simulate_coverage_time(
    n_agents: u32,
    actions_per_agent: u32,
    trials: u64,
    seed: u64,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> CordexStatus {
    guarded(|| {
        if out_mean.is_null() || out_std.is_null() {
            set_error("null out pointer".into());
            return CordexStatus::NullPointer;
        }
        match coverage::simulate_coverage_time(
            n_agents,
            actions_per_agent,
            trials as usize,
            seed,
            false,
        ) {
            Ok(result) => {
                unsafe {
                    *out_mean = result.empirical_mean;
                    *out_std = result.empirical_std;
                }
                CordexStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}
