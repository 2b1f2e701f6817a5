//! C ABI over the simulator.
//!
//! Scenarios are opaque handles created by `easyo_scenario_*` constructors
//! and released with [`easyo_scenario_free`]. Every fallible function
//! returns an [`EasyoStatus`]; on failure a description is available from
//! [`easyo_last_error`] on the same thread until the next failing call.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use easyo::config::{load_config, parse_config, Scenario};
use easyo::control::{energy_management, PurchaseCost};
use easyo::model::SupplyClass;
use easyo::sim::{run, RunOptions};
use easyo::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EasyoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Topology = 4,
    Io = 5,
    /// The simulation stopped on an internal consistency error.
    Runtime = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EasyoSupplyClass {
    Eh = 0,
    Eg = 1,
    Me = 2,
}

impl From<EasyoSupplyClass> for SupplyClass {
    fn from(c: EasyoSupplyClass) -> Self {
        match c {
            EasyoSupplyClass::Eh => SupplyClass::EH,
            EasyoSupplyClass::Eg => SupplyClass::EG,
            EasyoSupplyClass::Me => SupplyClass::ME,
        }
    }
}

/// Opaque scenario: topology plus parameters.
pub struct EasyoScenario {
    inner: Scenario,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EasyoRunSummary {
    pub slots: u64,
    pub seed: u64,
    pub penalty_weight: f64,
    pub avg_objective: f64,
    pub avg_utility: f64,
    pub avg_cost: f64,
    pub avg_data_queue: f64,
    pub max_data_queue: f64,
    pub avg_energy_queue: f64,
    pub max_energy_queue: f64,
    pub q_max: f64,
    pub theta_max: f64,
    pub audits: u64,
    pub monitor_violations: u64,
    /// 1 when every monitor passed, else 0.
    pub passed: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> EasyoStatus {
    match err {
        Error::Config { .. } => EasyoStatus::Config,
        Error::Topology(_) | Error::Validation(_) => EasyoStatus::Topology,
        Error::Io(_) | Error::Csv(_) => EasyoStatus::Io,
        _ => EasyoStatus::Runtime,
    }
}

fn guard<F: FnOnce() -> Result<(), EasyoStatus>>(f: F) -> EasyoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EasyoStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside easyo");
            EasyoStatus::Panic
        }
    }
}

fn fail(err: Error) -> EasyoStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn null(what: &str) -> EasyoStatus {
    set_error(format!("{what} is null"));
    EasyoStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, EasyoStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        EasyoStatus::InvalidArgument
    })
}

unsafe fn scenario_out(out: *mut *mut EasyoScenario, s: Scenario) {
    *out = Box::into_raw(Box::new(EasyoScenario { inner: s }));
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn easyo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn easyo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default scenario: generated 20-node topology with default parameters.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn easyo_scenario_default(out: *mut *mut EasyoScenario) -> EasyoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = parse_config("").map_err(fail)?;
        scenario_out(out, s);
        Ok(())
    })
}

/// Scenario from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` as in [`easyo_scenario_default`].
#[no_mangle]
pub unsafe extern "C" fn easyo_scenario_from_str(
    text: *const c_char,
    out: *mut *mut EasyoScenario,
) -> EasyoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(text, "text")?;
        let s = parse_config(text).map_err(fail)?;
        scenario_out(out, s);
        Ok(())
    })
}

/// Scenario from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as in [`easyo_scenario_default`].
#[no_mangle]
pub unsafe extern "C" fn easyo_scenario_from_file(
    path: *const c_char,
    out: *mut *mut EasyoScenario,
) -> EasyoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let s = load_config(Path::new(path)).map_err(fail)?;
        scenario_out(out, s);
        Ok(())
    })
}

/// Releases a scenario; null is ignored.
///
/// # Safety
/// `s` must come from an `easyo_scenario_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn easyo_scenario_free(s: *mut EasyoScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

unsafe fn scenario_mut<'a>(s: *mut EasyoScenario) -> Result<&'a mut EasyoScenario, EasyoStatus> {
    s.as_mut().ok_or_else(|| null("scenario"))
}

/// Sets the penalty weight `V`.
///
/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn easyo_scenario_set_penalty_weight(
    s: *mut EasyoScenario,
    v: f64,
) -> EasyoStatus {
    guard(|| {
        let s = scenario_mut(s)?;
        if !(v > 0.0 && v.is_finite()) {
            set_error(format!("penalty weight must be positive, got {v}"));
            return Err(EasyoStatus::InvalidArgument);
        }
        s.inner.params.penalty_weight = v;
        Ok(())
    })
}

/// Sets the number of slots to simulate.
///
/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn easyo_scenario_set_slots(
    s: *mut EasyoScenario,
    slots: u64,
) -> EasyoStatus {
    guard(|| {
        scenario_mut(s)?.inner.params.slots = slots;
        Ok(())
    })
}

/// Sets the random seed of the per-slot states.
///
/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn easyo_scenario_set_seed(s: *mut EasyoScenario, seed: u64) -> EasyoStatus {
    guard(|| {
        scenario_mut(s)?.inner.params.seed = seed;
        Ok(())
    })
}

/// Node, link and session counts; any output pointer may be null.
///
/// # Safety
/// `s` must be a live scenario handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn easyo_scenario_size(
    s: *const EasyoScenario,
    nodes: *mut usize,
    links: *mut usize,
    sessions: *mut usize,
) -> EasyoStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("scenario"))?;
        let net = &s.inner.net;
        if !nodes.is_null() {
            *nodes = net.num_nodes();
        }
        if !links.is_null() {
            *links = net.num_links();
        }
        if !sessions.is_null() {
            *sessions = net.num_sessions();
        }
        Ok(())
    })
}

/// Runs the scenario. With a non-null `out_dir` the CSV files are written
/// there.
///
/// # Safety
/// `s` must be a live scenario handle, `out_dir` null or a NUL-terminated
/// string, `summary` writable.
#[no_mangle]
pub unsafe extern "C" fn easyo_run(
    s: *const EasyoScenario,
    out_dir: *const c_char,
    summary: *mut EasyoRunSummary,
) -> EasyoStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("scenario"))?;
        if summary.is_null() {
            return Err(null("summary"));
        }
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(str_arg(out_dir, "out_dir")?)
        };
        let opts = RunOptions {
            slot_csv: true,
            ..RunOptions::default()
        };
        let m = run(&s.inner.net, &s.inner.params, &opts, dir.map(Path::new)).map_err(fail)?;
        *summary = EasyoRunSummary {
            slots: m.slots,
            seed: m.seed,
            penalty_weight: m.penalty_weight,
            avg_objective: m.avg_objective,
            avg_utility: m.avg_utility,
            avg_cost: m.avg_cost,
            avg_data_queue: m.avg_data_queue,
            max_data_queue: m.max_data_queue,
            avg_energy_queue: m.avg_energy_queue,
            max_energy_queue: m.max_energy_queue,
            q_max: m.q_max,
            theta_max: m.theta_max,
            audits: m.audits,
            monitor_violations: m.monitor_violations(),
            passed: m.passed() as u8,
        };
        Ok(())
    })
}

/// Source rate maximizing `V w1 ln(1 + r) - (Q - A * sense_cost) r` on `[0, max_rate]`.
///
/// # Safety
/// `rate` must be writable.
#[no_mangle]
pub unsafe extern "C" fn easyo_source_rate(
    backlog: f64,
    energy_weight: f64,
    sense_cost: f64,
    max_rate: f64,
    penalty_weight: f64,
    utility_weight: f64,
    rate: *mut f64,
) -> EasyoStatus {
    guard(|| {
        if rate.is_null() {
            return Err(null("rate"));
        }
        if !(backlog >= 0.0 && energy_weight <= 0.0 && sense_cost >= 0.0 && max_rate > 0.0) {
            set_error("need backlog >= 0, energy_weight <= 0, sense_cost >= 0, max_rate > 0");
            return Err(EasyoStatus::InvalidArgument);
        }
        let denom = backlog - energy_weight * sense_cost;
        let scale = penalty_weight * utility_weight;
        *rate = if denom <= 0.0 {
            max_rate
        } else if scale <= 0.0 {
            0.0
        } else {
            (scale / denom - 1.0).clamp(0.0, max_rate)
        };
        Ok(())
    })
}

/// Harvest and purchase for one node under a linear purchase weight.
///
/// # Safety
/// `harvest` and `purchase` must be writable.
#[no_mangle]
pub unsafe extern "C" fn easyo_energy_management(
    supply: EasyoSupplyClass,
    stored: f64,
    capacity: f64,
    price_weight: f64,
    harvestable: f64,
    grid_max: f64,
    harvest: *mut f64,
    purchase: *mut f64,
) -> EasyoStatus {
    guard(|| {
        if harvest.is_null() || purchase.is_null() {
            return Err(null("output"));
        }
        let (e, g) = energy_management(
            supply.into(),
            stored,
            capacity,
            PurchaseCost::Linear(price_weight),
            harvestable,
            grid_max,
        )
        .map_err(fail)?;
        *harvest = e;
        *purchase = g;
        Ok(())
    })
}
