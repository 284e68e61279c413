//! C ABI for the rrwalk toolkit.
//!
//! Conventions:
//! - Every fallible function returns an [`rrw_status`]; `RRW_OK` is 0.
//!   On failure, [`rrw_last_error`] returns a message for the calling
//!   thread, valid until that thread's next failing call.
//! - Handles (`rrw_config`, `rrw_trace`, `rrw_increments`) are opaque;
//!   each has exactly one matching `*_free`, and passing NULL to a free
//!   function is a no-op. Handles are not thread-safe to mutate or free
//!   concurrently, but distinct handles may be used from distinct
//!   threads, and read-only use of one config from many threads is fine.
//! - Pointers returned by accessor functions borrow from their handle
//!   and die with it.
//! - All entry points catch panics and turn them into `RRW_PANIC`.

#![allow(non_camel_case_types)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe, UnwindSafe};

use rrwalk::estimators::{self, TailSettings};
use rrwalk::oracle::{self, OracleOptions};
use rrwalk::regen::Increment;
use rrwalk::walk::{self, Scheme, TraceSummary, WalkConfig};

/// Status code returned by every fallible function in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum rrw_status {
    /// Success.
    RRW_OK = 0,
    /// A required pointer argument was NULL.
    RRW_NULL_POINTER = 1,
    /// Arguments failed validation (branching factor, reinforcement,
    /// tilt sign, replica count, ...).
    RRW_INVALID_ARGUMENT = 2,
    /// The simulation or estimator reported an error.
    RRW_ESTIMATION_FAILED = 3,
    /// The exact distribution is unavailable (horizon above the
    /// enumeration cap).
    RRW_ORACLE_FAILED = 4,
    /// A caller-provided output buffer is too small.
    RRW_BUFFER_TOO_SMALL = 5,
    /// An internal panic was caught; the handle states are unchanged.
    RRW_PANIC = 6,
}

/// Reinforcement rule selector for [`rrw_config_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum rrw_scheme {
    /// Edge weight `1 + k(c-1)` after `k` traversals.
    RRW_SCHEME_LINEAR = 0,
    /// Edge weight jumps to `c` on first traversal and stays there.
    RRW_SCHEME_ONCE = 1,
    /// Linear reinforcement capped after `k_max` traversals.
    RRW_SCHEME_K_TIMES = 2,
}

/// Opaque walk configuration: branching factor, reinforcement rule,
/// horizon, and base seed.
pub struct rrw_config {
    inner: WalkConfig,
}

/// Opaque simulated trajectory (the per-step height path).
pub struct rrw_trace {
    inner: TraceSummary,
}

/// Opaque batch of regeneration increments in harvest order, stored as
/// parallel duration / height-gain arrays.
pub struct rrw_increments {
    durations: Vec<u64>,
    height_gains: Vec<u32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: rrw_status, message: impl std::fmt::Display) -> rrw_status {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
    status
}

fn guarded(body: impl FnOnce() -> rrw_status + UnwindSafe) -> rrw_status {
    match catch_unwind(body) {
        Ok(status) => status,
        Err(_) => fail(rrw_status::RRW_PANIC, "internal panic"),
    }
}

/// Null-check an out-pointer and run `body` with a safe reference.
///
/// # Safety
/// `out` must be valid for writes when non-NULL; callers of the macro
/// are themselves `unsafe fn`s that document this.
macro_rules! out_ref {
    ($out:ident) => {
        match unsafe { $out.as_mut() } {
            Some(r) => r,
            None => return fail(rrw_status::RRW_NULL_POINTER, concat!(stringify!($out), " is NULL")),
        }
    };
}

macro_rules! handle_ref {
    ($ptr:ident) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => return fail(rrw_status::RRW_NULL_POINTER, concat!(stringify!($ptr), " is NULL")),
        }
    };
}

/// Version of the underlying toolkit as a static NUL-terminated string.
/// Never NULL; do not free.
#[no_mangle]
pub extern "C" fn rrw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the calling thread's most recent failure, as a
/// NUL-terminated string. Empty (not NULL) if nothing failed yet.
/// Valid until this thread's next failing call; do not free.
#[no_mangle]
pub extern "C" fn rrw_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Create a walk configuration.
///
/// `k_max` is only read for `RRW_SCHEME_K_TIMES`. `horizon` is the step
/// count simulated by [`rrw_simulate`]; estimator functions taking their
/// own horizon ignore it. On success writes a handle to `*out` (free
/// with [`rrw_config_free`]).
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn rrw_config_new(
    b: u32,
    scheme: rrw_scheme,
    c: f64,
    k_max: u32,
    horizon: u64,
    seed: u64,
    out: *mut *mut rrw_config,
) -> rrw_status {
    let out = out_ref!(out);
    guarded(AssertUnwindSafe(|| {
        let scheme = match scheme {
            rrw_scheme::RRW_SCHEME_LINEAR => Scheme::linear(c),
            rrw_scheme::RRW_SCHEME_ONCE => Scheme::once(c),
            rrw_scheme::RRW_SCHEME_K_TIMES => Scheme::k_times(c, k_max),
        };
        let scheme = match scheme {
            Ok(s) => s,
            Err(e) => return fail(rrw_status::RRW_INVALID_ARGUMENT, e),
        };
        match WalkConfig::new(b, scheme, horizon, seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(rrw_config { inner }));
                rrw_status::RRW_OK
            }
            Err(e) => fail(rrw_status::RRW_INVALID_ARGUMENT, e),
        }
    }))
}

/// Free a configuration handle. NULL is a no-op.
///
/// # Safety
/// `config` must be NULL or a handle from [`rrw_config_new`] not yet
/// freed; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rrw_config_free(config: *mut rrw_config) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

/// Run one walk for the configured horizon on the given RNG stream and
/// return its trajectory. Equal (config, stream) pairs give bitwise
/// equal trajectories.
///
/// # Safety
/// `config` must be a live configuration handle; `out` must be valid
/// for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn rrw_simulate(
    config: *const rrw_config,
    stream: u64,
    out: *mut *mut rrw_trace,
) -> rrw_status {
    let out = out_ref!(out);
    let config = handle_ref!(config);
    guarded(AssertUnwindSafe(|| match walk::run_with_stream(&config.inner, stream) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(rrw_trace { inner }));
            rrw_status::RRW_OK
        }
        Err(e) => fail(rrw_status::RRW_ESTIMATION_FAILED, e),
    }))
}

/// Free a trace handle. NULL is a no-op.
///
/// # Safety
/// `trace` must be NULL or a handle from [`rrw_simulate`] not yet
/// freed; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rrw_trace_free(trace: *mut rrw_trace) {
    if !trace.is_null() {
        drop(unsafe { Box::from_raw(trace) });
    }
}

/// Number of height entries in the trace: horizon + 1 (the walk starts
/// at the root, height 0). Returns 0 for NULL.
///
/// # Safety
/// `trace` must be NULL or a live trace handle.
#[no_mangle]
pub unsafe extern "C" fn rrw_trace_len(trace: *const rrw_trace) -> usize {
    match unsafe { trace.as_ref() } {
        Some(t) => t.inner.heights().len(),
        None => 0,
    }
}

/// Height after each step, as an array of [`rrw_trace_len`] entries
/// starting at height 0. Borrows from the trace; NULL for NULL input.
///
/// # Safety
/// `trace` must be NULL or a live trace handle; the returned pointer
/// dies with the trace.
#[no_mangle]
pub unsafe extern "C" fn rrw_trace_heights(trace: *const rrw_trace) -> *const u32 {
    match unsafe { trace.as_ref() } {
        Some(t) => t.inner.heights().as_ptr(),
        None => std::ptr::null(),
    }
}

/// Final height of the trace.
///
/// # Safety
/// `trace` must be a live trace handle; `height_out` must be valid for
/// writing one `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn rrw_trace_final_height(
    trace: *const rrw_trace,
    height_out: *mut u32,
) -> rrw_status {
    let height_out = out_ref!(height_out);
    let trace = handle_ref!(trace);
    *height_out = trace.inner.final_height();
    rrw_status::RRW_OK
}

/// Harvest confirmed i.i.d. regeneration increments from `replicas`
/// parallel walks at the config's horizon, replica `i` on stream
/// `stream_base + i`. `margin` is the confirmation depth; pass 0 for
/// the scheme-aware default. Free the result with
/// [`rrw_increments_free`].
///
/// # Safety
/// `config` must be a live configuration handle; `out` must be valid
/// for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn rrw_harvest(
    config: *const rrw_config,
    replicas: usize,
    margin: u32,
    stream_base: u64,
    out: *mut *mut rrw_increments,
) -> rrw_status {
    let out = out_ref!(out);
    let config = handle_ref!(config);
    guarded(AssertUnwindSafe(|| {
        let margin = if margin == 0 {
            rrwalk::regen::default_margin(config.inner.b, &config.inner.scheme)
        } else {
            margin
        };
        match estimators::harvest_increments(&config.inner, replicas, margin, stream_base) {
            Ok(harvest) => {
                let durations = harvest.pooled.iter().map(|p| p.duration).collect();
                let height_gains = harvest.pooled.iter().map(|p| p.height_gain).collect();
                *out = Box::into_raw(Box::new(rrw_increments { durations, height_gains }));
                rrw_status::RRW_OK
            }
            Err(e) => fail(rrw_status::RRW_ESTIMATION_FAILED, e),
        }
    }))
}

/// Free an increments handle. NULL is a no-op.
///
/// # Safety
/// `increments` must be NULL or a handle from [`rrw_harvest`] not yet
/// freed; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rrw_increments_free(increments: *mut rrw_increments) {
    if !increments.is_null() {
        drop(unsafe { Box::from_raw(increments) });
    }
}

/// Number of harvested increments. Returns 0 for NULL.
///
/// # Safety
/// `increments` must be NULL or a live increments handle.
#[no_mangle]
pub unsafe extern "C" fn rrw_increments_len(increments: *const rrw_increments) -> usize {
    match unsafe { increments.as_ref() } {
        Some(inc) => inc.durations.len(),
        None => 0,
    }
}

/// Block durations, as an array of [`rrw_increments_len`] entries
/// parallel to [`rrw_increments_height_gains`]. Borrows from the
/// handle; NULL for NULL input.
///
/// # Safety
/// `increments` must be NULL or a live increments handle; the returned
/// pointer dies with it.
#[no_mangle]
pub unsafe extern "C" fn rrw_increments_durations(
    increments: *const rrw_increments,
) -> *const u64 {
    match unsafe { increments.as_ref() } {
        Some(inc) => inc.durations.as_ptr(),
        None => std::ptr::null(),
    }
}

/// Block height gains (each at least 1), parallel to
/// [`rrw_increments_durations`]. Borrows from the handle; NULL for NULL
/// input.
///
/// # Safety
/// `increments` must be NULL or a live increments handle; the returned
/// pointer dies with it.
#[no_mangle]
pub unsafe extern "C" fn rrw_increments_height_gains(
    increments: *const rrw_increments,
) -> *const u32 {
    match unsafe { increments.as_ref() } {
        Some(inc) => inc.height_gains.as_ptr(),
        None => std::ptr::null(),
    }
}

fn increments_pairs(inc: &rrw_increments) -> Vec<Increment> {
    inc.durations
        .iter()
        .zip(&inc.height_gains)
        .map(|(&duration, &height_gain)| Increment { duration, height_gain })
        .collect()
}

/// Escape speed `h(X_n)/n` averaged over `replicas` walks at the
/// config's horizon (needs at least 2 replicas and a nonzero horizon).
///
/// # Safety
/// `config` must be a live configuration handle; `estimate_out` and
/// `stderr_out` must each be valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn rrw_speed_direct(
    config: *const rrw_config,
    replicas: usize,
    stream_base: u64,
    estimate_out: *mut f64,
    stderr_out: *mut f64,
) -> rrw_status {
    let estimate_out = out_ref!(estimate_out);
    let stderr_out = out_ref!(stderr_out);
    let config = handle_ref!(config);
    guarded(AssertUnwindSafe(|| {
        match estimators::sample_speed(&config.inner, replicas, stream_base) {
            Ok(est) => {
                *estimate_out = est.estimate;
                *stderr_out = est.stderr;
                rrw_status::RRW_OK
            }
            Err(e) => fail(rrw_status::RRW_ESTIMATION_FAILED, e),
        }
    }))
}

/// Escape speed as mean height gain over mean duration across harvested
/// regeneration increments (needs at least 30 of them), with a
/// delta-method standard error.
///
/// # Safety
/// `increments` must be a live increments handle; `estimate_out` and
/// `stderr_out` must each be valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn rrw_speed_ratio(
    increments: *const rrw_increments,
    estimate_out: *mut f64,
    stderr_out: *mut f64,
) -> rrw_status {
    let estimate_out = out_ref!(estimate_out);
    let stderr_out = out_ref!(stderr_out);
    let increments = handle_ref!(increments);
    guarded(AssertUnwindSafe(|| {
        match estimators::speed_ratio(&increments_pairs(increments)) {
            Ok(est) => {
                *estimate_out = est.estimate;
                *stderr_out = est.stderr;
                rrw_status::RRW_OK
            }
            Err(e) => fail(rrw_status::RRW_ESTIMATION_FAILED, e),
        }
    }))
}

/// Estimate `P(h(X_n) >= ceil((speed + epsilon) n))` from `replicas`
/// walks of `n` steps, importance-sampled with the given tilt
/// (`tilt >= 0`; 0 means plain Monte Carlo). Thresholds outside
/// `1..=n` return the exact probability with a zero standard error.
///
/// # Safety
/// `config` must be a live configuration handle; `p_out` and
/// `stderr_out` must each be valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn rrw_tail_upper(
    config: *const rrw_config,
    speed: f64,
    epsilon: f64,
    n: u64,
    replicas: usize,
    tilt: f64,
    stream_base: u64,
    p_out: *mut f64,
    stderr_out: *mut f64,
) -> rrw_status {
    let p_out = out_ref!(p_out);
    let stderr_out = out_ref!(stderr_out);
    let config = handle_ref!(config);
    guarded(AssertUnwindSafe(|| {
        let settings = TailSettings { replicas, tilt, confirm_buffer: 0, stream_base };
        match estimators::tail_upper_tilted(&config.inner, speed, epsilon, n, &settings) {
            Ok(est) => {
                *p_out = est.p_hat;
                *stderr_out = est.stderr;
                rrw_status::RRW_OK
            }
            Err(e) => fail(rrw_status::RRW_ESTIMATION_FAILED, e),
        }
    }))
}

/// Estimate the stay-low probability `P(h(X_n) <= level)` from
/// `replicas` walks of `n` steps, importance-sampled with the given
/// tilt (`tilt <= 0`; 0 means plain Monte Carlo).
///
/// # Safety
/// `config` must be a live configuration handle; `p_out` and
/// `stderr_out` must each be valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn rrw_tail_lower(
    config: *const rrw_config,
    level: u32,
    n: u64,
    replicas: usize,
    tilt: f64,
    stream_base: u64,
    p_out: *mut f64,
    stderr_out: *mut f64,
) -> rrw_status {
    let p_out = out_ref!(p_out);
    let stderr_out = out_ref!(stderr_out);
    let config = handle_ref!(config);
    guarded(AssertUnwindSafe(|| {
        let settings = TailSettings { replicas, tilt, confirm_buffer: 0, stream_base };
        match estimators::tail_lower_tilted(&config.inner, level, n, &settings) {
            Ok(est) => {
                *p_out = est.p_hat;
                *stderr_out = est.stderr;
                rrw_status::RRW_OK
            }
            Err(e) => fail(rrw_status::RRW_ESTIMATION_FAILED, e),
        }
    }))
}

/// Exact distribution of the height after `n` steps (`n` at most 8):
/// writes `P(h(X_n) = h)` for `h = 0..=n` into `atoms_out[0..n+1]` and
/// stores the entry count in `*written_out`. Fails with
/// `RRW_BUFFER_TOO_SMALL` when `capacity <= n`.
///
/// # Safety
/// `config` must be a live configuration handle; `atoms_out` must be
/// valid for writing `capacity` doubles; `written_out` must be valid
/// for writing one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn rrw_exact_distribution(
    config: *const rrw_config,
    n: u64,
    atoms_out: *mut f64,
    capacity: usize,
    written_out: *mut usize,
) -> rrw_status {
    let written_out = out_ref!(written_out);
    let config = handle_ref!(config);
    if atoms_out.is_null() {
        return fail(rrw_status::RRW_NULL_POINTER, "atoms_out is NULL");
    }
    guarded(AssertUnwindSafe(|| {
        let needed = match usize::try_from(n) {
            Ok(v) => v + 1,
            Err(_) => return fail(rrw_status::RRW_INVALID_ARGUMENT, "n does not fit in memory"),
        };
        if capacity < needed {
            return fail(
                rrw_status::RRW_BUFFER_TOO_SMALL,
                format!("need room for {needed} atoms, capacity is {capacity}"),
            );
        }
        match oracle::exact_distribution_f64(&config.inner, n, &OracleOptions::default()) {
            Ok(atoms) => {
                debug_assert_eq!(atoms.len(), needed);
                let dst = unsafe { std::slice::from_raw_parts_mut(atoms_out, needed) };
                dst.copy_from_slice(&atoms);
                *written_out = needed;
                rrw_status::RRW_OK
            }
            Err(e) => fail(rrw_status::RRW_ORACLE_FAILED, e),
        }
    }))
}
