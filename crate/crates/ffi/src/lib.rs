//! C ABI over the solver: opaque handles, integer error codes, a
//! thread-local last-error message.
//!
//! Conventions:
//! - Every function returns `0` on success. Nonzero codes mirror the CLI
//!   exit codes: `1` invalid argument, `2` configuration error,
//!   `3` invariant failure, `4` numeric failure.
//! - Handles are created by `*_load`/`hmca_solve` and must be released with
//!   the matching `*_free`; they are never shared across calls mutably and
//!   may be used from several threads for read-only queries.
//! - `hmca_last_error` returns a pointer valid until the next failing call
//!   on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hawkes_mca::config::{load_config, load_config_str, Loaded};
use hawkes_mca::lattice::{assemble_transitions, build_lattice, LatticeSpec};
use hawkes_mca::solver::{backward_solve, query_value, ValueTable};
use hawkes_mca::validate::{check_suite, rollout_policy, sigma_from_lambda0};
use hawkes_mca::Error;

pub const HMCA_OK: i32 = 0;
pub const HMCA_INVALID_ARGUMENT: i32 = 1;
pub const HMCA_CONFIG_ERROR: i32 = 2;
pub const HMCA_INVARIANT_ERROR: i32 = 3;
pub const HMCA_NUMERIC_ERROR: i32 = 4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn code_of(err: &Error) -> i32 {
    err.exit_code()
}

fn fail(err: Error) -> i32 {
    set_error(&err.to_string());
    code_of(&err)
}

fn guard<F: FnOnce() -> i32>(f: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            HMCA_NUMERIC_ERROR
        }
    }
}

/// Opaque validated configuration.
#[allow(non_camel_case_types)]
pub struct hmca_config {
    loaded: Loaded,
}

/// Opaque solved problem: lattice, value surface and the model it came from.
#[allow(non_camel_case_types)]
pub struct hmca_solution {
    lattice: LatticeSpec,
    table: ValueTable,
    loaded: Loaded,
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok()
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn hmca_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failure on this thread (empty when none).
#[no_mangle]
pub extern "C" fn hmca_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads and validates a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hmca_config_load(
    path: *const c_char,
    out: *mut *mut hmca_config,
) -> i32 {
    guard(|| {
        let (Some(path), false) = (cstr(path), out.is_null()) else {
            set_error("null argument");
            return HMCA_INVALID_ARGUMENT;
        };
        match load_config(Path::new(path)) {
            Ok(loaded) => {
                *out = Box::into_raw(Box::new(hmca_config { loaded }));
                HMCA_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Parses a configuration from a TOML string.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hmca_config_load_str(
    text: *const c_char,
    out: *mut *mut hmca_config,
) -> i32 {
    guard(|| {
        let (Some(text), false) = (cstr(text), out.is_null()) else {
            set_error("null argument");
            return HMCA_INVALID_ARGUMENT;
        };
        match load_config_str(text) {
            Ok(loaded) => {
                *out = Box::into_raw(Box::new(hmca_config { loaded }));
                HMCA_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a configuration handle.
///
/// # Safety
/// `cfg` must come from a `hmca_config_load*` call (or be null).
#[no_mangle]
pub unsafe extern "C" fn hmca_config_free(cfg: *mut hmca_config) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Solves the backward dynamic program for the configured problem.
///
/// # Safety
/// `cfg` must be a live configuration handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hmca_solve(
    cfg: *const hmca_config,
    out: *mut *mut hmca_solution,
) -> i32 {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            set_error("null argument");
            return HMCA_INVALID_ARGUMENT;
        }
        let loaded = &(*cfg).loaded;
        let lat_cfg = &loaded.raw.lattice;
        let result = build_lattice(&loaded.model, lat_cfg.h, lat_cfg.m, lat_cfg.upsilon)
            .and_then(|lattice| {
                let tm = assemble_transitions(&loaded.model, &lattice)?;
                let (table, _) = backward_solve(&tm, &loaded.cost)?;
                Ok((lattice, table))
            });
        match result {
            Ok((lattice, table)) => {
                *out = Box::into_raw(Box::new(hmca_solution {
                    lattice,
                    table,
                    loaded: loaded.clone(),
                }));
                HMCA_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a solution handle.
///
/// # Safety
/// `sol` must come from `hmca_solve` (or be null).
#[no_mangle]
pub unsafe extern "C" fn hmca_solution_free(sol: *mut hmca_solution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Value surface query at (t, x, ς) by multilinear interpolation; `sigma`
/// carries `dim` excitation components.
///
/// # Safety
/// `sol`, `sigma` (length `dim`) and `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hmca_solution_value(
    sol: *const hmca_solution,
    t: f64,
    x: f64,
    sigma: *const f64,
    dim: usize,
    out_value: *mut f64,
) -> i32 {
    guard(|| {
        if sol.is_null() || sigma.is_null() || out_value.is_null() {
            set_error("null argument");
            return HMCA_INVALID_ARGUMENT;
        }
        let sol = &*sol;
        let sigma = std::slice::from_raw_parts(sigma, dim);
        match query_value(&sol.table, &sol.lattice, t, x, sigma) {
            Ok(v) => {
                *out_value = v;
                HMCA_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Convenience query for single-component kernels: the initial intensity
/// λ₀ is mapped onto the excitation grid.
///
/// # Safety
/// `sol` and `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hmca_solution_value_at_lambda(
    sol: *const hmca_solution,
    t: f64,
    x: f64,
    lambda0: f64,
    out_value: *mut f64,
) -> i32 {
    guard(|| {
        if sol.is_null() || out_value.is_null() {
            set_error("null argument");
            return HMCA_INVALID_ARGUMENT;
        }
        let sol = &*sol;
        let sigma = match sigma_from_lambda0(&sol.loaded.model, lambda0) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        match query_value(&sol.table, &sol.lattice, t, x, &sigma) {
            Ok(v) => {
                *out_value = v;
                HMCA_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Solves and rolls out the optimal policy with `n_paths` Monte Carlo paths
/// from (x0, λ₀), writing the sample mean and standard error.
///
/// # Safety
/// `cfg`, `out_mean` and `out_se` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hmca_rollout(
    cfg: *const hmca_config,
    x0: f64,
    lambda0: f64,
    n_paths: usize,
    seed: u64,
    out_mean: *mut f64,
    out_se: *mut f64,
) -> i32 {
    guard(|| {
        if cfg.is_null() || out_mean.is_null() || out_se.is_null() {
            set_error("null argument");
            return HMCA_INVALID_ARGUMENT;
        }
        let loaded = &(*cfg).loaded;
        let lat_cfg = &loaded.raw.lattice;
        let result = build_lattice(&loaded.model, lat_cfg.h, lat_cfg.m, lat_cfg.upsilon)
            .and_then(|lattice| {
                let tm = assemble_transitions(&loaded.model, &lattice)?;
                let (_, policy) = backward_solve(&tm, &loaded.cost)?;
                let sigma0 = sigma_from_lambda0(&loaded.model, lambda0)?;
                rollout_policy(&tm, &loaded.cost, &policy, x0, &sigma0, n_paths, seed)
            });
        match result {
            Ok(stats) => {
                *out_mean = stats.mean;
                *out_se = stats.std_error;
                HMCA_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Runs the aggregated invariant suite; returns 0 when every check passes,
/// 3 otherwise (the failing check names are in `hmca_last_error`).
///
/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn hmca_check(cfg: *const hmca_config) -> i32 {
    guard(|| {
        if cfg.is_null() {
            set_error("null argument");
            return HMCA_INVALID_ARGUMENT;
        }
        let loaded = &(*cfg).loaded;
        let lat_cfg = &loaded.raw.lattice;
        let seed = loaded.raw.seed.unwrap_or(0xC0FFEE);
        let results = check_suite(
            &loaded.model,
            &loaded.cost,
            lat_cfg.h,
            lat_cfg.m,
            lat_cfg.upsilon,
            seed,
        );
        let failures: Vec<String> = results
            .iter()
            .filter(|r| !r.passed)
            .map(|r| format!("{}: {}", r.name, r.detail))
            .collect();
        if failures.is_empty() {
            HMCA_OK
        } else {
            set_error(&failures.join("; "));
            HMCA_INVARIANT_ERROR
        }
    })
}
