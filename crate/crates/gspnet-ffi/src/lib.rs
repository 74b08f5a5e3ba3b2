//! C ABI for the gspnet library.
//!
//! The surface follows the usual opaque-handle pattern: a network instance
//! is created once, passed by pointer, and freed by the caller. Every
//! function returns a [`GspnetStatus`] code; outputs travel through `out`
//! pointers. `gspnet_status_message` turns a code into a static description.
//!
//! The generated header lives at `include/gspnet.h`.

use std::ffi::c_char;
use std::ptr;

use gspnet::analysis::{generator_drift, lyapunov_v};
use gspnet::error::Error;
use gspnet::network::NetworkSpec;
use gspnet::plq::{GspParams, TrafficState};
use gspnet::policy::{gsp_route, BernoulliWeights, Policy};
use gspnet::sim::{average_system_time, run_episode, Horizon, SimConfig, SimMode};

/// Call outcome. Zero is success; everything else identifies the failure.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GspnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotStabilizable = 3,
    InfeasibleParams = 4,
    NoCompletedJobs = 5,
    InternalError = 6,
}

fn status_of(err: &Error) -> GspnetStatus {
    match err {
        Error::NotStabilizable { .. } => GspnetStatus::NotStabilizable,
        Error::InfeasibleParams { .. } => GspnetStatus::InfeasibleParams,
        Error::ConfigInvalid(_) | Error::InvalidWeights(_) => GspnetStatus::InvalidArgument,
        Error::NoCompletedJobs => GspnetStatus::NoCompletedJobs,
        _ => GspnetStatus::InternalError,
    }
}

/// Opaque network handle.
pub struct GspnetNetwork {
    spec: NetworkSpec,
}

/// Stability constants of one instance.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GspnetStability {
    pub min_cut_capacity: f64,
    pub m: f64,
    pub delta_g: i32,
    /// Open upper bound for beta, `m^(1/(2+delta_G))`.
    pub beta_max: f64,
}

/// Simulation settings. `mode` is 0 for the Bernoulli grid, 1 for the
/// event-driven chain.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GspnetSimConfig {
    pub mode: i32,
    pub dt: f64,
    pub horizon_secs: f64,
    pub warmup_secs: f64,
    pub seed: u64,
}

/// Policy selector. `beta`/`gamma` drive kind 0 (GSP); `eta` drives kind 2
/// (Bernoulli); kind 1 (SSP) has no parameters.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GspnetPolicy {
    pub kind: i32,
    pub beta: f64,
    pub gamma: f64,
    pub eta: [f64; 3],
}

/// Episode summary.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GspnetSummary {
    pub arrivals: u64,
    pub completed: u64,
    pub censored: u64,
    /// NaN when no job completed.
    pub mean_system_time: f64,
    pub time_average_queue: f64,
    pub utilization: [f64; 5],
}

unsafe fn state_from(ptr: *const u32) -> Option<TrafficState> {
    if ptr.is_null() {
        return None;
    }
    let mut x = [0u32; 7];
    unsafe { ptr::copy_nonoverlapping(ptr, x.as_mut_ptr(), 7) };
    Some(TrafficState(x))
}

/// Creates a bridge-network handle from five service rates (jobs/sec,
/// servers 1..5) and the arrival rate. The caller owns the handle and must
/// release it with `gspnet_network_free`.
///
/// # Safety
/// `service_rates` must point to five readable doubles and `out` must be a
/// valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn gspnet_network_new(
    service_rates: *const f64,
    arrival_rate: f64,
    out: *mut *mut GspnetNetwork,
) -> GspnetStatus {
    if service_rates.is_null() || out.is_null() {
        return GspnetStatus::NullPointer;
    }
    let mut rates = [0.0f64; 5];
    unsafe { ptr::copy_nonoverlapping(service_rates, rates.as_mut_ptr(), 5) };
    match NetworkSpec::bridge(rates, arrival_rate) {
        Ok(spec) => {
            unsafe { *out = Box::into_raw(Box::new(GspnetNetwork { spec })) };
            GspnetStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Releases a handle created by `gspnet_network_new`. Null is a no-op.
///
/// # Safety
/// `net` must be a pointer previously returned by `gspnet_network_new` that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn gspnet_network_free(net: *mut GspnetNetwork) {
    if !net.is_null() {
        drop(unsafe { Box::from_raw(net) });
    }
}

/// Computes min-cut capacity, `m`, `delta_G` and the beta bound.
///
/// # Safety
/// `net` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gspnet_stability(
    net: *const GspnetNetwork,
    out: *mut GspnetStability,
) -> GspnetStatus {
    let (Some(net), false) = (unsafe { net.as_ref() }, out.is_null()) else {
        return GspnetStatus::NullPointer;
    };
    match net.spec.stability_constants() {
        Ok(c) => {
            unsafe {
                *out = GspnetStability {
                    min_cut_capacity: c.min_cut_capacity,
                    m: c.m,
                    delta_g: i32::from(c.delta_g),
                    beta_max: c.beta_max,
                };
            }
            GspnetStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Evaluates the three piecewise-linear path costs at a state.
///
/// # Safety
/// `state` must point to seven readable u32 values and `out` to three
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gspnet_q_values(
    state: *const u32,
    beta: f64,
    out: *mut f64,
) -> GspnetStatus {
    let (Some(x), false) = (unsafe { state_from(state) }, out.is_null()) else {
        return GspnetStatus::NullPointer;
    };
    if !(beta > 1.0) {
        return GspnetStatus::InvalidArgument;
    }
    let q = gspnet::plq::q_values(&x, beta);
    unsafe { ptr::copy_nonoverlapping(q.as_ptr(), out, 3) };
    GspnetStatus::Ok
}

/// Evaluates the Lyapunov function `V(x)`.
///
/// # Safety
/// `state` must point to seven readable u32 values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gspnet_lyapunov(
    state: *const u32,
    beta: f64,
    out: *mut f64,
) -> GspnetStatus {
    let (Some(x), false) = (unsafe { state_from(state) }, out.is_null()) else {
        return GspnetStatus::NullPointer;
    };
    if !(beta > 1.0) {
        return GspnetStatus::InvalidArgument;
    }
    unsafe { *out = lyapunov_v(&x, beta) };
    GspnetStatus::Ok
}

/// Routes one arrival under the GSP policy at the given state; ties break by
/// the seeded generator, so equal seeds reproduce the decision. Writes the
/// path index (0 = path 12, 1 = path 135, 2 = path 45).
///
/// # Safety
/// `net` and `state` must be valid; `out_path` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gspnet_route(
    net: *const GspnetNetwork,
    state: *const u32,
    beta: f64,
    gamma: f64,
    seed: u64,
    out_path: *mut u32,
) -> GspnetStatus {
    let (Some(net), Some(x), false) =
        (unsafe { net.as_ref() }, unsafe { state_from(state) }, out_path.is_null())
    else {
        return GspnetStatus::NullPointer;
    };
    let Ok(params) = GspParams::new(beta, gamma) else {
        return GspnetStatus::InvalidArgument;
    };
    let mut rng = rand_chacha_rng(seed);
    let decision = gsp_route(&x, &params, &net.spec.service_rates, &mut rng);
    unsafe { *out_path = decision.path.index() as u32 };
    GspnetStatus::Ok
}

fn rand_chacha_rng(seed: u64) -> impl rand::Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha12Rng::seed_from_u64(seed)
}

/// Exact Lyapunov drift of the GSP policy at a state.
///
/// # Safety
/// `net` and `state` must be valid; `out_drift` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gspnet_drift(
    net: *const GspnetNetwork,
    state: *const u32,
    beta: f64,
    gamma: f64,
    out_drift: *mut f64,
) -> GspnetStatus {
    let (Some(net), Some(x), false) =
        (unsafe { net.as_ref() }, unsafe { state_from(state) }, out_drift.is_null())
    else {
        return GspnetStatus::NullPointer;
    };
    let Ok(params) = GspParams::new(beta, gamma) else {
        return GspnetStatus::InvalidArgument;
    };
    unsafe { *out_drift = generator_drift(&x, &params, &net.spec).drift };
    GspnetStatus::Ok
}

/// Runs one simulation episode and fills the summary.
///
/// # Safety
/// All pointers must be valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn gspnet_simulate(
    net: *const GspnetNetwork,
    policy: *const GspnetPolicy,
    config: *const GspnetSimConfig,
    out: *mut GspnetSummary,
) -> GspnetStatus {
    let (Some(net), Some(policy), Some(config), false) = (
        unsafe { net.as_ref() },
        unsafe { policy.as_ref() },
        unsafe { config.as_ref() },
        out.is_null(),
    ) else {
        return GspnetStatus::NullPointer;
    };

    let policy = match policy.kind {
        0 => match GspParams::new(policy.beta, policy.gamma) {
            Ok(params) => Policy::gsp(params, net.spec.service_rates),
            Err(_) => return GspnetStatus::InvalidArgument,
        },
        1 => Policy::Ssp,
        2 => match BernoulliWeights::new(policy.eta) {
            Ok(w) => Policy::Bernoulli(w),
            Err(_) => return GspnetStatus::InvalidArgument,
        },
        _ => return GspnetStatus::InvalidArgument,
    };
    let mode = match config.mode {
        0 => SimMode::BernoulliDt,
        1 => SimMode::EventDriven,
        _ => return GspnetStatus::InvalidArgument,
    };
    let sim = SimConfig {
        mode,
        dt: config.dt,
        horizon: Horizon::Time(config.horizon_secs),
        seed: config.seed,
        warmup: config.warmup_secs,
        initial_state: TrafficState::EMPTY,
    };
    match run_episode(&net.spec, &policy, &sim) {
        Ok(data) => {
            unsafe {
                *out = GspnetSummary {
                    arrivals: data.arrivals,
                    completed: data.completed_jobs.len() as u64,
                    censored: data.censored,
                    mean_system_time: average_system_time(&data).unwrap_or(f64::NAN),
                    time_average_queue: data.time_average_queue(),
                    utilization: data.utilizations(),
                };
            }
            GspnetStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn gspnet_status_message(status: GspnetStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        GspnetStatus::Ok => b"ok\0",
        GspnetStatus::NullPointer => b"null pointer argument\0",
        GspnetStatus::InvalidArgument => b"invalid argument\0",
        GspnetStatus::NotStabilizable => b"arrival rate at or above min-cut capacity\0",
        GspnetStatus::InfeasibleParams => b"(beta, gamma) outside the stability region\0",
        GspnetStatus::NoCompletedJobs => b"no completed jobs\0",
        GspnetStatus::InternalError => b"internal error\0",
    };
    msg.as_ptr().cast()
}
