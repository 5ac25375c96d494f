//! C interface to the ksflow solver.
//!
//! A solver is created from a preset, optionally adjusted, then run. Every
//! fallible call returns a [`KsflowStatus`]; on failure the message is kept
//! per thread and can be copied out with [`ksflow_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ksflow::assembly::{NuclearConfig, Nucleus};
use ksflow::cli::max_orthonormality_error;
use ksflow::config::{Preset, RunConfig};
use ksflow::flow::{adaptive_dt, make_initial_waves, run, DtSchedule, FlowState, Monitors};
use ksflow::hartree::HartreeBoundary;
use ksflow::mesh::BoxDomain;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsflowStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The run stopped at the step cap before meeting the energy tolerance.
    Unconverged = 3,
    SolverFailure = 4,
    /// Results were requested before a successful run.
    NotRun = 5,
    Panic = 6,
}

/// Opaque solver handle.
pub struct KsflowSolver {
    config: RunConfig,
    dofs: usize,
    state: Option<FlowState>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: KsflowStatus, msg: impl Into<String>) -> KsflowStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> KsflowStatus) -> KsflowStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(KsflowStatus::Panic, "internal panic"),
    }
}

unsafe fn solver_mut<'a>(solver: *mut KsflowSolver) -> Result<&'a mut KsflowSolver, KsflowStatus> {
    solver
        .as_mut()
        .ok_or_else(|| fail(KsflowStatus::NullPointer, "solver handle is null"))
}

unsafe fn finished<'a>(solver: *const KsflowSolver) -> Result<&'a FlowState, KsflowStatus> {
    let s = solver
        .as_ref()
        .ok_or_else(|| fail(KsflowStatus::NullPointer, "solver handle is null"))?;
    s.state
        .as_ref()
        .ok_or_else(|| fail(KsflowStatus::NotRun, "solver has not been run"))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> KsflowStatus {
    if out.is_null() {
        return fail(KsflowStatus::NullPointer, "output pointer is null");
    }
    out.write(value);
    KsflowStatus::Ok
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Creates a solver for the preset `"he"`, `"lih"` or `"ch4"` and stores the
/// handle in `out`. The handle must be released with [`ksflow_solver_free`].
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_new_preset(name: *const c_char, out: *mut *mut KsflowSolver) -> KsflowStatus {
    guard(|| {
        if name.is_null() || out.is_null() {
            return fail(KsflowStatus::NullPointer, "preset name or output pointer is null");
        }
        out.write(ptr::null_mut());
        let Ok(name) = CStr::from_ptr(name).to_str() else {
            return fail(KsflowStatus::InvalidArgument, "preset name is not UTF-8");
        };
        let preset = match Preset::parse(name) {
            Ok(p) => p,
            Err(e) => return fail(KsflowStatus::InvalidArgument, e.to_string()),
        };
        let solver = KsflowSolver {
            config: RunConfig::preset(preset),
            dofs: 0,
            state: None,
        };
        out.write(Box::into_raw(Box::new(solver)));
        KsflowStatus::Ok
    })
}

/// Releases a solver. Null is ignored.
///
/// # Safety
/// `solver` must be null or a handle from [`ksflow_solver_new_preset`] that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_free(solver: *mut KsflowSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// Sets a fixed time step, replacing the preset schedule.
///
/// # Safety
/// `solver` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_set_dt(solver: *mut KsflowSolver, dt: f64) -> KsflowStatus {
    guard(|| {
        let s = tri!(solver_mut(solver));
        if !(dt > 0.0 && dt.is_finite()) {
            return fail(KsflowStatus::InvalidArgument, format!("dt must be positive and finite, got {dt}"));
        }
        s.config.dt = DtSchedule::Fixed(dt);
        KsflowStatus::Ok
    })
}

/// Switches to the two-level adaptive step rule.
///
/// # Safety
/// `solver` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_set_adaptive_dt(solver: *mut KsflowSolver) -> KsflowStatus {
    guard(|| {
        let s = tri!(solver_mut(solver));
        s.config.dt = DtSchedule::Adaptive;
        KsflowStatus::Ok
    })
}

/// Enables or disables the Hartree term.
///
/// # Safety
/// `solver` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_set_hartree(solver: *mut KsflowSolver, enabled: bool) -> KsflowStatus {
    guard(|| {
        let s = tri!(solver_mut(solver));
        s.config.hartree = enabled.then(HartreeBoundary::default);
        KsflowStatus::Ok
    })
}

/// Caps the number of interior degrees of freedom.
///
/// # Safety
/// `solver` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_set_mesh_budget(solver: *mut KsflowSolver, budget: usize) -> KsflowStatus {
    guard(|| {
        let s = tri!(solver_mut(solver));
        if budget == 0 {
            return fail(KsflowStatus::InvalidArgument, "mesh budget must be at least 1");
        }
        s.config.mesh_budget = budget;
        KsflowStatus::Ok
    })
}

/// Sets the energy-difference stopping tolerance and the step cap.
///
/// # Safety
/// `solver` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_set_stopping(
    solver: *mut KsflowSolver,
    outer_tol: f64,
    max_steps: usize,
) -> KsflowStatus {
    guard(|| {
        let s = tri!(solver_mut(solver));
        if !(outer_tol > 0.0 && outer_tol.is_finite()) || max_steps == 0 {
            return fail(
                KsflowStatus::InvalidArgument,
                format!("need outer_tol > 0 and max_steps >= 1, got {outer_tol} and {max_steps}"),
            );
        }
        s.config.outer_tol = outer_tol;
        s.config.max_steps = max_steps;
        KsflowStatus::Ok
    })
}

/// Builds the mesh and runs the flow from the preset's initial orbitals.
/// Returns `Unconverged` when the step cap was hit; the results are
/// available either way.
///
/// # Safety
/// `solver` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_run(solver: *mut KsflowSolver) -> KsflowStatus {
    guard(|| {
        let s = tri!(solver_mut(solver));
        s.state = None;
        let result = s.config.build_system().and_then(|system| {
            let initial = make_initial_waves(&system, &s.config.initial_rule())?;
            let state = run(&system, initial, &s.config.flow_config(Monitors::default()))?;
            Ok((system.dim(), state))
        });
        match result {
            Ok((dofs, state)) => {
                let converged = state.converged;
                s.dofs = dofs;
                s.state = Some(state);
                if converged {
                    KsflowStatus::Ok
                } else {
                    fail(KsflowStatus::Unconverged, "step cap reached before the energy tolerance")
                }
            }
            Err(e) => fail(KsflowStatus::SolverFailure, e.to_string()),
        }
    })
}

/// Total energy of the final orbitals.
///
/// # Safety
/// `solver` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_energy(solver: *const KsflowSolver, out: *mut f64) -> KsflowStatus {
    guard(|| write_out(out, tri!(finished(solver)).energy.total))
}

/// Number of completed time steps.
///
/// # Safety
/// `solver` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_step_count(solver: *const KsflowSolver, out: *mut usize) -> KsflowStatus {
    guard(|| write_out(out, tri!(finished(solver)).history.len()))
}

/// Largest Gram deviation over the run, initial state included.
///
/// # Safety
/// `solver` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_orthonormality_error(
    solver: *const KsflowSolver,
    out: *mut f64,
) -> KsflowStatus {
    guard(|| write_out(out, max_orthonormality_error(tri!(finished(solver)))))
}

/// Interior degrees of freedom of the mesh used by the last run.
///
/// # Safety
/// `solver` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_dof_count(solver: *const KsflowSolver, out: *mut usize) -> KsflowStatus {
    guard(|| {
        tri!(finished(solver));
        write_out(out, (*solver).dofs)
    })
}

/// Copies the per-step energies into `buf` (at most `len` values) and
/// stores the full trace length in `total`. `buf` may be null when `len`
/// is 0, which queries the length only.
///
/// # Safety
/// `solver` must be a live handle, `buf` valid for `len` writes and
/// `total` writable.
#[no_mangle]
pub unsafe extern "C" fn ksflow_solver_energy_trace(
    solver: *const KsflowSolver,
    buf: *mut f64,
    len: usize,
    total: *mut usize,
) -> KsflowStatus {
    guard(|| {
        let state = tri!(finished(solver));
        if buf.is_null() && len > 0 {
            return fail(KsflowStatus::NullPointer, "trace buffer is null");
        }
        let n = state.history.len();
        for (i, r) in state.history.iter().take(len).enumerate() {
            buf.add(i).write(r.energy.total);
        }
        write_out(total, n)
    })
}

/// The two-level adaptive step for a given last energy drop.
#[no_mangle]
pub extern "C" fn ksflow_adaptive_dt(last_energy_drop: f64) -> f64 {
    adaptive_dt(last_energy_drop)
}

/// External potential `-Σ Z_j / |p - R_j|` of `count` nuclei. `charges`
/// holds `count` values and `positions` `3 * count` coordinates.
///
/// # Safety
/// The pointers must be valid for the stated lengths and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ksflow_external_potential(
    charges: *const f64,
    positions: *const f64,
    count: usize,
    point: *const f64,
    out: *mut f64,
) -> KsflowStatus {
    guard(|| {
        if count > 0 && (charges.is_null() || positions.is_null()) || point.is_null() {
            return fail(KsflowStatus::NullPointer, "input pointer is null");
        }
        let nuclei: Vec<Nucleus> = (0..count)
            .map(|j| Nucleus {
                charge: *charges.add(j),
                position: [0, 1, 2].map(|a| *positions.add(3 * j + a)),
            })
            .collect();
        let p = [0, 1, 2].map(|a| *point.add(a));
        let mut lo = p;
        let mut hi = p;
        for n in &nuclei {
            for a in 0..3 {
                lo[a] = lo[a].min(n.position[a]);
                hi[a] = hi[a].max(n.position[a]);
            }
        }
        let result = BoxDomain::new(lo.map(|v| v - 1.0), hi.map(|v| v + 1.0))
            .and_then(|domain| NuclearConfig::new(nuclei, &domain))
            .and_then(|config| config.eval_external_potential(&p));
        match result {
            Ok(v) => write_out(out, v),
            Err(e) => fail(KsflowStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to fit, into `buf`. Returns the full message length without
/// the terminator; pass a null `buf` to query it.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ksflow_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            buf.add(n).write(0);
        }
        msg.len()
    })
}
