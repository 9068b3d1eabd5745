//! C interface to `imitate`.
//!
//! Every fallible call returns an [`ImitateStatus`]. On failure the message
//! is kept per thread and can be read with [`imitate_last_error`]. Objects are
//! handed out as opaque pointers and must be released with the matching
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use imitate::cli::{run_scenario, verify_scenario};
use imitate::dynamics::{vector_field, ImitationRule};
use imitate::equilibria::{equilibrium_set, EquilibriumLabel, EquilibriumSet};
use imitate::error::Error;
use imitate::game::Game;
use imitate::potential::builtin_potential;
use imitate::scenario::{load_scenario, parse_scenario, Scenario};
use imitate::simplex::Configuration;
use imitate::simulate::{integrate, IntegratorConfig, Method, Trajectory};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImitateStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Validation = 4,
    Parse = 5,
    Integrator = 6,
    NoPotential = 7,
    OutOfRange = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImitateLabel {
    Nash = 0,
    RestrictedNash = 1,
    CriticalNonNash = 2,
}

pub struct ImitateGame(Game);
pub struct ImitateRule(ImitationRule);
pub struct ImitateEquilibria(EquilibriumSet);
pub struct ImitateTrajectory(Trajectory);
pub struct ImitateScenario(Scenario);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> ImitateStatus {
    match e {
        Error::DimensionMismatch { .. } => ImitateStatus::DimensionMismatch,
        Error::Validation { .. } => ImitateStatus::Validation,
        Error::Parse { .. } => ImitateStatus::Parse,
        Error::LeftSimplex { .. } | Error::StepUnderflow { .. } => ImitateStatus::Integrator,
        Error::NoPotential => ImitateStatus::NoPotential,
        Error::Io(_) => ImitateStatus::Io,
        _ => ImitateStatus::InvalidArgument,
    }
}

struct Fail(ImitateStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ImitateStatus::NullPointer, format!("null pointer: {what}"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ImitateStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ImitateStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ImitateStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ImitateStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn square(m: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(m, m, data)
}

fn check_len(expected: usize, found: usize) -> Result<(), Fail> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found }.into())
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn imitate_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a linear game from an `m × m` reward matrix in row-major order.
/// Symmetric and two-action games get their quadratic potential attached.
///
/// # Safety
/// `rewards` must point to `m * m` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imitate_game_linear(m: usize, rewards: *const f64, out: *mut *mut ImitateGame) -> ImitateStatus {
    guard(|| {
        let data = slice(rewards, m * m, "rewards")?;
        let mut game = Game::linear(square(m, data))?;
        if let Some(p) = builtin_potential(&game) {
            game = game.with_potential(p)?;
        }
        put(out, ImitateGame(game))
    })
}

/// # Safety
/// `game` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn imitate_game_free(game: *mut ImitateGame) {
    if !game.is_null() {
        drop(Box::from_raw(game));
    }
}

/// Number of actions, or 0 for NULL.
///
/// # Safety
/// `game` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn imitate_game_num_actions(game: *const ImitateGame) -> usize {
    game.as_ref().map_or(0, |g| g.0.num_actions())
}

/// Writes the reward of each action at `x` into `out`.
///
/// # Safety
/// `x` and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn imitate_game_rewards(
    game: *const ImitateGame,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> ImitateStatus {
    guard(|| {
        let g = &get(game, "game")?.0;
        check_len(g.num_actions(), len)?;
        let x = Configuration::new(slice(x, len, "x")?.to_vec())?;
        slice_mut(out, len, "out")?.copy_from_slice(&g.rewards(&x)?);
        Ok(())
    })
}

/// Potential value at `x`.
///
/// # Safety
/// `x` must point to `len` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imitate_game_potential(
    game: *const ImitateGame,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> ImitateStatus {
    guard(|| {
        let g = &get(game, "game")?.0;
        check_len(g.num_actions(), len)?;
        let x = Configuration::new(slice(x, len, "x")?.to_vec())?;
        let p = g.potential().ok_or(Error::NoPotential)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = p.value(&x)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imitate_rule_replicator(out: *mut *mut ImitateRule) -> ImitateStatus {
    guard(|| put(out, ImitateRule(ImitationRule::replicator())))
}

/// Arctan rule with an `m × m` gain matrix in row-major order.
///
/// # Safety
/// `gains` must point to `m * m` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imitate_rule_arctan(m: usize, gains: *const f64, out: *mut *mut ImitateRule) -> ImitateStatus {
    guard(|| {
        let data = slice(gains, m * m, "gains")?;
        put(out, ImitateRule(ImitationRule::arctan(square(m, data))?))
    })
}

/// # Safety
/// `rule` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn imitate_rule_free(rule: *mut ImitateRule) {
    if !rule.is_null() {
        drop(Box::from_raw(rule));
    }
}

/// Evaluates the imitation vector field at `x`.
///
/// # Safety
/// `x` and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn imitate_vector_field(
    game: *const ImitateGame,
    rule: *const ImitateRule,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> ImitateStatus {
    guard(|| {
        let g = &get(game, "game")?.0;
        let r = &get(rule, "rule")?.0;
        check_len(g.num_actions(), len)?;
        let x = Configuration::new(slice(x, len, "x")?.to_vec())?;
        slice_mut(out, len, "out")?.copy_from_slice(&vector_field(g, r, &x)?);
        Ok(())
    })
}

/// Enumerates the labeled equilibria of the game.
///
/// # Safety
/// `game` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn imitate_equilibria(game: *const ImitateGame, tol: f64, out: *mut *mut ImitateEquilibria) -> ImitateStatus {
    guard(|| {
        let g = &get(game, "game")?.0;
        put(out, ImitateEquilibria(equilibrium_set(g, tol)?))
    })
}

/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn imitate_equilibria_len(set: *const ImitateEquilibria) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Copies equilibrium `index` into `point` and stores its label.
///
/// # Safety
/// `point` must point to `len` doubles and `label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imitate_equilibria_get(
    set: *const ImitateEquilibria,
    index: usize,
    point: *mut f64,
    len: usize,
    label: *mut ImitateLabel,
) -> ImitateStatus {
    guard(|| {
        let s = &get(set, "set")?.0;
        let e = s
            .items
            .get(index)
            .ok_or_else(|| Fail(ImitateStatus::OutOfRange, format!("index {index} out of range")))?;
        check_len(e.point.dim(), len)?;
        slice_mut(point, len, "point")?.copy_from_slice(e.point.weights());
        if label.is_null() {
            return Err(null("label"));
        }
        *label = match e.label {
            EquilibriumLabel::Nash => ImitateLabel::Nash,
            EquilibriumLabel::RestrictedNash => ImitateLabel::RestrictedNash,
            EquilibriumLabel::CriticalNonNash => ImitateLabel::CriticalNonNash,
        };
        Ok(())
    })
}

/// # Safety
/// `set` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn imitate_equilibria_free(set: *mut ImitateEquilibria) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Integrates from `x0` up to `t_end`, observing every `interval`.
/// A positive `step` selects fixed-step RK4; zero selects the adaptive method
/// with relative tolerance `tol`.
///
/// # Safety
/// `x0` must point to `len` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imitate_integrate(
    game: *const ImitateGame,
    rule: *const ImitateRule,
    x0: *const f64,
    len: usize,
    t_end: f64,
    interval: f64,
    step: f64,
    tol: f64,
    out: *mut *mut ImitateTrajectory,
) -> ImitateStatus {
    guard(|| {
        let g = &get(game, "game")?.0;
        let r = &get(rule, "rule")?.0;
        check_len(g.num_actions(), len)?;
        let x0 = Configuration::new(slice(x0, len, "x0")?.to_vec())?;
        let mut cfg = if step > 0.0 {
            IntegratorConfig::fixed(step)
        } else {
            IntegratorConfig {
                method: Method::Rk45Adaptive { rtol: tol, atol: tol / 100.0 },
                ..IntegratorConfig::default()
            }
        };
        cfg.t_end = t_end;
        cfg.observation_interval = interval;
        cfg.validate()?;
        put(out, ImitateTrajectory(integrate(g, r, &x0, &cfg)?))
    })
}

/// Number of observations, or 0 for NULL.
///
/// # Safety
/// `traj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn imitate_trajectory_len(traj: *const ImitateTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.len())
}

/// Copies observation `index` into `time` and `state`.
///
/// # Safety
/// `state` must point to `len` doubles and `time` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imitate_trajectory_get(
    traj: *const ImitateTrajectory,
    index: usize,
    time: *mut f64,
    state: *mut f64,
    len: usize,
) -> ImitateStatus {
    guard(|| {
        let t = &get(traj, "trajectory")?.0;
        let x = t
            .states
            .get(index)
            .ok_or_else(|| Fail(ImitateStatus::OutOfRange, format!("index {index} out of range")))?;
        check_len(x.dim(), len)?;
        if time.is_null() {
            return Err(null("time"));
        }
        *time = t.times[index];
        slice_mut(state, len, "state")?.copy_from_slice(x.weights());
        Ok(())
    })
}

/// # Safety
/// `traj` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn imitate_trajectory_free(traj: *mut ImitateTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Loads a scenario from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn imitate_scenario_load(path: *const c_char, out: *mut *mut ImitateScenario) -> ImitateStatus {
    guard(|| {
        let path = string(path, "path")?;
        put(out, ImitateScenario(load_scenario(path)?))
    })
}

/// Parses a scenario from JSON text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn imitate_scenario_parse(text: *const c_char, out: *mut *mut ImitateScenario) -> ImitateStatus {
    guard(|| {
        let text = string(text, "text")?;
        put(out, ImitateScenario(parse_scenario(text)?))
    })
}

/// Runs the scenario and writes its outputs below `out_dir`.
///
/// # Safety
/// `scenario` must be a live handle and `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn imitate_scenario_run(scenario: *const ImitateScenario, out_dir: *const c_char) -> ImitateStatus {
    guard(|| {
        let s = &get(scenario, "scenario")?.0;
        let dir = string(out_dir, "out_dir")?;
        run_scenario(s, Path::new(dir))?;
        Ok(())
    })
}

/// Runs every property check; `all_ok` receives whether each matched its expectation.
///
/// # Safety
/// `scenario` must be a live handle and `all_ok` writable.
#[no_mangle]
pub unsafe extern "C" fn imitate_scenario_verify(scenario: *const ImitateScenario, all_ok: *mut bool) -> ImitateStatus {
    guard(|| {
        let s = &get(scenario, "scenario")?.0;
        if all_ok.is_null() {
            return Err(null("all_ok"));
        }
        *all_ok = verify_scenario(s)?.ok;
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn imitate_scenario_free(scenario: *mut ImitateScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}
