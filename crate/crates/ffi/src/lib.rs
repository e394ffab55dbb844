//! C interface to `drr-core`.
//!
//! Objects cross the boundary as opaque pointers created by a `*_new`/`*_from_*`
//! call and released with the matching `*_free`. Every fallible call returns a
//! [`DrrStatus`]; on failure a message is available from [`drr_last_error`] on
//! the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use drr_core::cli::{self, CliError};
use drr_core::geometry::Vec2;
use drr_core::recovery::{plan_recovery_with_fallback, PlanSource, RecoveryError, RecoveryPlan};
use drr_core::replan::max_safe_speed;
use drr_core::sim::{run_drr, Metrics, Mode, Outcome, RunMode, Scenario, SimLog};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Simulation = 5,
    Io = 6,
    OutOfRange = 7,
    Infeasible = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrrMode {
    /// Detect, recover and replan.
    Drr = 0,
    /// Track the initial trajectory and ignore collisions.
    Preplanned = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrrControllerMode {
    Tracking = 0,
    Recovering = 1,
    Replanning = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrrPlanSource {
    Requested = 0,
    Scaled = 1,
    ZeroTerminal = 2,
    Emergency = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DrrMetrics {
    pub t_end: f64,
    pub path_length: f64,
    pub control_energy: f64,
    pub collisions: usize,
    pub goal_error: f64,
    /// Non-zero when the goal tolerance was met.
    pub reached: u8,
}

/// One logged simulation step. Arm compressions are read separately.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrrRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
    pub mode: DrrControllerMode,
}

/// Opaque scenario handle.
pub struct DrrScenario(Scenario);

/// Opaque handle holding the log and metrics of one simulated trial.
pub struct DrrRun {
    log: SimLog,
    metrics: Metrics,
}

/// Opaque handle holding one recovery plan.
pub struct DrrRecoveryPlan(RecoveryPlan);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: DrrStatus, msg: impl Into<String>) -> DrrStatus {
    set_error(msg);
    status
}

fn cli_status(e: &CliError) -> DrrStatus {
    match e {
        CliError::Parse { .. } => DrrStatus::Parse,
        CliError::Validation(_) => DrrStatus::Validation,
        CliError::Simulation(_) => DrrStatus::Simulation,
        CliError::Io(..) | CliError::Log { .. } => DrrStatus::Io,
    }
}

/// Runs `f`, converting a panic into [`DrrStatus::Panic`].
fn guard(f: impl FnOnce() -> DrrStatus) -> DrrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(DrrStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

/// # Safety
/// `s` must be null or a NUL-terminated string valid for reads.
unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, DrrStatus> {
    if s.is_null() {
        return Err(fail(DrrStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(DrrStatus::InvalidUtf8, "string argument is not UTF-8"))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn drr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn drr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a scenario from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drr_scenario_from_json(json: *const c_char, out: *mut *mut DrrScenario) -> DrrStatus {
    guard(|| {
        if out.is_null() {
            return fail(DrrStatus::NullPointer, "null output pointer");
        }
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match cli::parse_scenario_str(text, "<json>") {
            Ok(sc) => {
                *out = Box::into_raw(Box::new(DrrScenario(sc)));
                DrrStatus::Ok
            }
            Err(e) => fail(cli_status(&e), e.to_string()),
        }
    })
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drr_scenario_from_file(path: *const c_char, out: *mut *mut DrrScenario) -> DrrStatus {
    guard(|| {
        if out.is_null() {
            return fail(DrrStatus::NullPointer, "null output pointer");
        }
        let path = match read_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match cli::parse_scenario(Path::new(path)) {
            Ok(sc) => {
                *out = Box::into_raw(Box::new(DrrScenario(sc)));
                DrrStatus::Ok
            }
            Err(e) => fail(cli_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `scenario` must be null or a handle from `drr_scenario_from_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn drr_scenario_free(scenario: *mut DrrScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Largest approach speed the scenario's robot can absorb (m/s).
///
/// # Safety
/// `scenario` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drr_max_safe_speed(scenario: *const DrrScenario, out: *mut f64) -> DrrStatus {
    guard(|| {
        let (Some(sc), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(DrrStatus::NullPointer, "null argument");
        };
        match max_safe_speed(&sc.0.params) {
            Ok(v) => {
                *out = v;
                DrrStatus::Ok
            }
            Err(e) => fail(DrrStatus::Validation, e.to_string()),
        }
    })
}

/// Simulates one trial.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drr_run(scenario: *const DrrScenario, seed: u64, mode: DrrMode, out: *mut *mut DrrRun) -> DrrStatus {
    guard(|| {
        let (Some(sc), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(DrrStatus::NullPointer, "null argument");
        };
        let mode = match mode {
            DrrMode::Drr => RunMode::Drr,
            DrrMode::Preplanned => RunMode::Preplanned,
        };
        match run_drr(&sc.0, seed, mode) {
            Ok((log, metrics)) => {
                *out = Box::into_raw(Box::new(DrrRun { log, metrics }));
                DrrStatus::Ok
            }
            Err(e) => fail(DrrStatus::Simulation, e.to_string()),
        }
    })
}

/// # Safety
/// `run` must be null or a handle from `drr_run` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn drr_run_free(run: *mut DrrRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drr_run_metrics(run: *const DrrRun, out: *mut DrrMetrics) -> DrrStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), out.is_null()) else {
            return fail(DrrStatus::NullPointer, "null argument");
        };
        let m = r.metrics;
        *out = DrrMetrics {
            t_end: m.t_end,
            path_length: m.path_length,
            control_energy: m.control_energy,
            collisions: m.collisions,
            goal_error: m.goal_error,
            reached: u8::from(r.log.outcome == Outcome::Reached),
        };
        DrrStatus::Ok
    })
}

/// Number of logged steps, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn drr_run_record_count(run: *const DrrRun) -> usize {
    run.as_ref().map_or(0, |r| r.log.records.len())
}

/// Number of arms in each record, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn drr_run_arm_count(run: *const DrrRun) -> usize {
    run.as_ref().and_then(|r| r.log.records.first()).map_or(0, |rec| rec.arms.len())
}

/// Copies step `index` into `out`. `arms` may be null; otherwise it receives
/// `drr_run_arm_count` compressions (m).
///
/// # Safety
/// `run` must be a live handle, `out` a valid pointer and `arms`, when not
/// null, must have room for `drr_run_arm_count(run)` doubles.
#[no_mangle]
pub unsafe extern "C" fn drr_run_record(run: *const DrrRun, index: usize, out: *mut DrrRecord, arms: *mut f64) -> DrrStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), out.is_null()) else {
            return fail(DrrStatus::NullPointer, "null argument");
        };
        let Some(rec) = r.log.records.get(index) else {
            return fail(DrrStatus::OutOfRange, format!("record {index} of {}", r.log.records.len()));
        };
        *out = DrrRecord {
            t: rec.t,
            x: rec.x,
            y: rec.y,
            heading: rec.heading,
            vx: rec.vx,
            vy: rec.vy,
            ax: rec.ax,
            ay: rec.ay,
            mode: match rec.mode {
                Mode::Tracking => DrrControllerMode::Tracking,
                Mode::Recovering => DrrControllerMode::Recovering,
                Mode::Replanning => DrrControllerMode::Replanning,
            },
        };
        if !arms.is_null() {
            ptr::copy_nonoverlapping(rec.arms.as_ptr(), arms, rec.arms.len());
        }
        DrrStatus::Ok
    })
}

/// Writes the run as a JSON-lines log.
///
/// # Safety
/// `run` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn drr_run_write_log(run: *const DrrRun, path: *const c_char) -> DrrStatus {
    guard(|| {
        let Some(r) = run.as_ref() else {
            return fail(DrrStatus::NullPointer, "null run");
        };
        let path = match read_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match cli::write_log(Path::new(path), &r.log) {
            Ok(()) => DrrStatus::Ok,
            Err(e) => fail(cli_status(&e), e.to_string()),
        }
    })
}

/// Plans a recovery with the scenario's robot and recovery settings. Falls
/// back to a reduced or zero terminal velocity when the request is infeasible.
/// Inputs are in the collision frame.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drr_recovery_plan(
    scenario: *const DrrScenario,
    x0: f64,
    v0_x: f64,
    v0_y: f64,
    vt_x: f64,
    vt_y: f64,
    theta: f64,
    out: *mut *mut DrrRecoveryPlan,
) -> DrrStatus {
    guard(|| {
        let (Some(sc), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(DrrStatus::NullPointer, "null argument");
        };
        let sc = &sc.0;
        match plan_recovery_with_fallback(x0, Vec2::new(v0_x, v0_y), Vec2::new(vt_x, vt_y), theta, &sc.params, &sc.recovery) {
            Ok(plan) => {
                *out = Box::into_raw(Box::new(DrrRecoveryPlan(plan)));
                DrrStatus::Ok
            }
            Err(e @ (RecoveryError::QpInfeasible | RecoveryError::Qp(_))) => fail(DrrStatus::Infeasible, e.to_string()),
            Err(e) => fail(DrrStatus::Validation, e.to_string()),
        }
    })
}

/// # Safety
/// `plan` must be null or a handle from `drr_recovery_plan` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn drr_recovery_plan_free(plan: *mut DrrRecoveryPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Number of control steps, or 0 for a null handle. There is one more state
/// than controls.
///
/// # Safety
/// `plan` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn drr_recovery_plan_steps(plan: *const DrrRecoveryPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.0.controls.len())
}

/// # Safety
/// `plan` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drr_recovery_plan_source(plan: *const DrrRecoveryPlan, out: *mut DrrPlanSource) -> DrrStatus {
    guard(|| {
        let (Some(p), false) = (plan.as_ref(), out.is_null()) else {
            return fail(DrrStatus::NullPointer, "null argument");
        };
        *out = match p.0.source {
            PlanSource::Requested => DrrPlanSource::Requested,
            PlanSource::Scaled => DrrPlanSource::Scaled,
            PlanSource::ZeroTerminal => DrrPlanSource::ZeroTerminal,
            PlanSource::Emergency => DrrPlanSource::Emergency,
        };
        DrrStatus::Ok
    })
}

/// Copies knot `index` (`0..=steps`) as `[x, y, vx, vy]` into `out`.
///
/// # Safety
/// `plan` must be a live handle; `out` must have room for 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn drr_recovery_plan_state(plan: *const DrrRecoveryPlan, index: usize, out: *mut f64) -> DrrStatus {
    guard(|| {
        let (Some(p), false) = (plan.as_ref(), out.is_null()) else {
            return fail(DrrStatus::NullPointer, "null argument");
        };
        let Some(s) = p.0.states.get(index) else {
            return fail(DrrStatus::OutOfRange, format!("state {index} of {}", p.0.states.len()));
        };
        ptr::copy_nonoverlapping(s.as_ptr(), out, 4);
        DrrStatus::Ok
    })
}

/// Copies control `index` (`0..steps`) as `[nu_x, nu_y]` into `out`.
///
/// # Safety
/// `plan` must be a live handle; `out` must have room for 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn drr_recovery_plan_control(plan: *const DrrRecoveryPlan, index: usize, out: *mut f64) -> DrrStatus {
    guard(|| {
        let (Some(p), false) = (plan.as_ref(), out.is_null()) else {
            return fail(DrrStatus::NullPointer, "null argument");
        };
        let Some(u) = p.0.controls.get(index) else {
            return fail(DrrStatus::OutOfRange, format!("control {index} of {}", p.0.controls.len()));
        };
        *out = u.x;
        *out.add(1) = u.y;
        DrrStatus::Ok
    })
}
