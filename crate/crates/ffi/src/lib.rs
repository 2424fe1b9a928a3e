//! C ABI over `weylrg`.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `_free` function. Every fallible call returns a
//! [`WeylrgStatus`] and writes results through out-pointers. The message of the
//! last failure on the calling thread is available from
//! [`weylrg_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use weylrg::lattice_model::{build_params, classify_phase, weyl_points, HoppingParams, Offset, PhaseLabel};
use weylrg::multiscale::{crossover_scale, CutoffSpec, H_STAR_NEG_INF};
use weylrg::propagator::{free_propagator, Momentum4};
use weylrg::rg_flow::{run_flow, solve_nu, FlowSettings, FlowTrajectory, InteractionSpec, RunningCouplings};
use weylrg::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeylrgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParams = 2,
    /// The operation has no answer for these parameters (e.g. Weyl points of an insulator).
    NotApplicable = 3,
    IndexOutOfRange = 4,
    Singular = 5,
    SizeLimit = 6,
    /// Flow left the perturbative window or lost positivity.
    FlowFailure = 7,
    NoConvergence = 8,
    ComputationFailed = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeylrgPhase {
    Semimetal = 0,
    Insulator = 1,
    Critical = 2,
}

/// Running couplings after one flow step.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeylrgCouplings {
    pub h: i32,
    /// 1 for the lattice regime, 2 for the relativistic one.
    pub regime: u8,
    pub z: f64,
    pub v: f64,
    pub v3: f64,
    pub nu: f64,
}

impl From<&RunningCouplings> for WeylrgCouplings {
    fn from(c: &RunningCouplings) -> Self {
        WeylrgCouplings { h: c.h, regime: c.regime.number(), z: c.z, v: c.v, v3: c.v3, nu: c.nu }
    }
}

/// Opaque model parameters.
pub struct WeylrgParams(HoppingParams);

/// Opaque flow trajectory.
pub struct WeylrgTrajectory(FlowTrajectory);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> WeylrgStatus {
    match e {
        Error::InvalidParams(_) | Error::Configuration(_) | Error::TimeOutOfWindow { .. } => WeylrgStatus::InvalidParams,
        Error::SingularMomentum(_) => WeylrgStatus::Singular,
        Error::SizeLimit(_) => WeylrgStatus::SizeLimit,
        Error::SignLoss { .. } | Error::BlowUp { .. } => WeylrgStatus::FlowFailure,
        Error::NoConvergence { .. } => WeylrgStatus::NoConvergence,
        Error::OutOfRegime { .. } => WeylrgStatus::NotApplicable,
        _ => WeylrgStatus::ComputationFailed,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (WeylrgStatus, String)>) -> WeylrgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WeylrgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            WeylrgStatus::Panic
        }
    }
}

fn lift<T>(r: weylrg::Result<T>) -> Result<T, (WeylrgStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null() -> (WeylrgStatus, String) {
    (WeylrgStatus::NullPointer, "null pointer argument".into())
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn weylrg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn weylrg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Builds validated parameters with `mu` fixed through `r`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn weylrg_params_new(
    t: f64,
    t_perp: f64,
    t_prime: f64,
    r: f64,
    u: f64,
    out: *mut *mut WeylrgParams,
) -> WeylrgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let p = lift(build_params(t, t_perp, t_prime, Offset::R(r), u))?;
        *out = Box::into_raw(Box::new(WeylrgParams(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from [`weylrg_params_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn weylrg_params_free(p: *mut WeylrgParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn weylrg_phase(p: *const WeylrgParams, out: *mut WeylrgPhase) -> WeylrgStatus {
    guard(|| {
        let (Some(p), false) = (p.as_ref(), out.is_null()) else { return Err(null()) };
        *out = match classify_phase(&p.0) {
            PhaseLabel::Semimetal => WeylrgPhase::Semimetal,
            PhaseLabel::Insulator => WeylrgPhase::Insulator,
            PhaseLabel::Critical => WeylrgPhase::Critical,
        };
        Ok(())
    })
}

/// Writes `p_F`, `v0` and `v3,0`; `NotApplicable` in the insulating phase.
///
/// # Safety
/// `p` must be a live handle and the out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn weylrg_weyl_points(
    p: *const WeylrgParams,
    p_f: *mut f64,
    v0: *mut f64,
    v30: *mut f64,
) -> WeylrgStatus {
    guard(|| {
        let Some(p) = p.as_ref() else { return Err(null()) };
        if p_f.is_null() || v0.is_null() || v30.is_null() {
            return Err(null());
        }
        let w = weyl_points(&p.0).ok_or((WeylrgStatus::NotApplicable, "insulating phase has no Weyl points".into()))?;
        *p_f = w.p_f;
        *v0 = w.v0;
        *v30 = w.v30;
        Ok(())
    })
}

/// Crossover scale `h*`; `INT32_MIN` at the critical point.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn weylrg_crossover_scale(p: *const WeylrgParams, out: *mut i32) -> WeylrgStatus {
    guard(|| {
        let (Some(p), false) = (p.as_ref(), out.is_null()) else { return Err(null()) };
        let h = crossover_scale(&p.0, &CutoffSpec::for_params(&p.0));
        debug_assert!(h == H_STAR_NEG_INF || h <= 0);
        *out = h;
        Ok(())
    })
}

/// Free propagator at `(k0, k1, k2, k3)` as 8 doubles: real and imaginary
/// parts of entries 00, 01, 10, 11.
///
/// # Safety
/// `p` must be a live handle and `out` must hold 8 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn weylrg_free_propagator(
    p: *const WeylrgParams,
    k0: f64,
    k1: f64,
    k2: f64,
    k3: f64,
    out: *mut f64,
) -> WeylrgStatus {
    guard(|| {
        let (Some(p), false) = (p.as_ref(), out.is_null()) else { return Err(null()) };
        let s = lift(free_propagator(Momentum4::new(k0, k1, k2, k3), &p.0))?;
        let vals = s.to_reals();
        ptr::copy_nonoverlapping(vals.as_ptr(), out, 8);
        Ok(())
    })
}

unsafe fn store_trajectory(out: *mut *mut WeylrgTrajectory, t: FlowTrajectory) {
    *out = Box::into_raw(Box::new(WeylrgTrajectory(t)));
}

/// Runs the flow with bare counterterm `nu` down to `h_min` on an `l³` grid.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn weylrg_flow_run(
    p: *const WeylrgParams,
    nu: f64,
    h_min: i32,
    l: usize,
    out: *mut *mut WeylrgTrajectory,
) -> WeylrgStatus {
    guard(|| {
        let (Some(p), false) = (p.as_ref(), out.is_null()) else { return Err(null()) };
        let inter = lift(InteractionSpec::from_params(&p.0))?;
        let t = lift(run_flow(&p.0, &inter, nu, h_min, &FlowSettings::with_l(l)))?;
        store_trajectory(out, t);
        Ok(())
    })
}

/// Solves the counterterm fixed point; writes `ν` and the trajectory carrying it.
///
/// # Safety
/// `p` must be a live handle and the out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn weylrg_solve_nu(
    p: *const WeylrgParams,
    h_min: i32,
    l: usize,
    nu_out: *mut f64,
    out: *mut *mut WeylrgTrajectory,
) -> WeylrgStatus {
    guard(|| {
        let Some(p) = p.as_ref() else { return Err(null()) };
        if nu_out.is_null() || out.is_null() {
            return Err(null());
        }
        let inter = lift(InteractionSpec::from_params(&p.0))?;
        let (nu, t) = lift(solve_nu(&p.0, &inter, h_min, &FlowSettings::with_l(l)))?;
        *nu_out = nu;
        store_trajectory(out, t);
        Ok(())
    })
}

/// Number of couplings rows, counting the initial one.
///
/// # Safety
/// `t` must be null or a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn weylrg_trajectory_len(t: *const WeylrgTrajectory) -> usize {
    t.as_ref().map_or(0, |t| t.0.steps.len() + 1)
}

/// Row `index` of the trajectory; row 0 holds the initial couplings.
///
/// # Safety
/// `t` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn weylrg_trajectory_get(
    t: *const WeylrgTrajectory,
    index: usize,
    out: *mut WeylrgCouplings,
) -> WeylrgStatus {
    guard(|| {
        let (Some(t), false) = (t.as_ref(), out.is_null()) else { return Err(null()) };
        let c = match index {
            0 => &t.0.initial,
            i => &t.0.steps.get(i - 1).ok_or((WeylrgStatus::IndexOutOfRange, format!("row {i} out of range")))?.couplings,
        };
        *out = c.into();
        Ok(())
    })
}

/// Largest one-loop beta magnitude along the trajectory.
///
/// # Safety
/// `t` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn weylrg_trajectory_max_beta(t: *const WeylrgTrajectory, out: *mut f64) -> WeylrgStatus {
    guard(|| {
        let (Some(t), false) = (t.as_ref(), out.is_null()) else { return Err(null()) };
        *out = t.0.max_beta_magnitude();
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn weylrg_trajectory_free(t: *mut WeylrgTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}
