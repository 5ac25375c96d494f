use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ksflow_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        ksflow_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn new_solver(name: &str) -> *mut KsflowSolver {
    let name = CString::new(name).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ksflow_solver_new_preset(name.as_ptr(), &mut s) }, KsflowStatus::Ok);
    assert!(!s.is_null());
    s
}

#[test]
fn unknown_preset_is_rejected_with_message() {
    let name = CString::new("xenon").unwrap();
    let mut s = ptr::null_mut();
    let status = unsafe { ksflow_solver_new_preset(name.as_ptr(), &mut s) };
    assert_eq!(status, KsflowStatus::InvalidArgument);
    assert!(s.is_null());
    assert!(last_error().contains("xenon"));
}

#[test]
fn null_handles_are_reported() {
    let mut e = 0.0;
    unsafe {
        assert_eq!(ksflow_solver_run(ptr::null_mut()), KsflowStatus::NullPointer);
        assert_eq!(ksflow_solver_energy(ptr::null(), &mut e), KsflowStatus::NullPointer);
        assert_eq!(ksflow_solver_set_dt(ptr::null_mut(), 0.1), KsflowStatus::NullPointer);
        ksflow_solver_free(ptr::null_mut());
    }
}

#[test]
fn results_need_a_run_and_arguments_are_validated() {
    let s = new_solver("he");
    let mut e = 0.0;
    unsafe {
        assert_eq!(ksflow_solver_energy(s, &mut e), KsflowStatus::NotRun);
        assert_eq!(ksflow_solver_set_dt(s, -1.0), KsflowStatus::InvalidArgument);
        assert_eq!(ksflow_solver_set_mesh_budget(s, 0), KsflowStatus::InvalidArgument);
        assert_eq!(ksflow_solver_set_stopping(s, 0.0, 10), KsflowStatus::InvalidArgument);
        ksflow_solver_free(s);
    }
}

#[test]
fn small_run_round_trip() {
    let s = new_solver("he");
    unsafe {
        assert_eq!(ksflow_solver_set_mesh_budget(s, 300), KsflowStatus::Ok);
        assert_eq!(ksflow_solver_set_dt(s, 0.5), KsflowStatus::Ok);
        assert_eq!(ksflow_solver_set_hartree(s, true), KsflowStatus::Ok);
        assert_eq!(ksflow_solver_run(s), KsflowStatus::Ok, "{}", last_error());

        let (mut e, mut steps, mut dofs, mut orth) = (0.0, 0usize, 0usize, 0.0);
        assert_eq!(ksflow_solver_energy(s, &mut e), KsflowStatus::Ok);
        assert_eq!(ksflow_solver_step_count(s, &mut steps), KsflowStatus::Ok);
        assert_eq!(ksflow_solver_dof_count(s, &mut dofs), KsflowStatus::Ok);
        assert_eq!(ksflow_solver_orthonormality_error(s, &mut orth), KsflowStatus::Ok);
        assert!(e.is_finite() && e < 0.0);
        assert!(steps > 1);
        assert!(dofs > 0 && dofs <= 300);
        assert!(orth <= 1e-6);

        let mut total = 0usize;
        assert_eq!(ksflow_solver_energy_trace(s, ptr::null_mut(), 0, &mut total), KsflowStatus::Ok);
        assert_eq!(total, steps);
        let mut trace = vec![0.0; total + 3];
        assert_eq!(
            ksflow_solver_energy_trace(s, trace.as_mut_ptr(), trace.len(), &mut total),
            KsflowStatus::Ok
        );
        assert_eq!(trace[total - 1], e);
        assert!(trace[..total].windows(2).all(|w| w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs())));

        let mut head = [0.0; 2];
        assert_eq!(ksflow_solver_energy_trace(s, head.as_mut_ptr(), 2, &mut total), KsflowStatus::Ok);
        assert_eq!(head, [trace[0], trace[1]]);
        ksflow_solver_free(s);
    }
}

#[test]
fn step_cap_reports_unconverged() {
    let s = new_solver("he");
    unsafe {
        ksflow_solver_set_mesh_budget(s, 300);
        ksflow_solver_set_stopping(s, 1e-6, 1);
        assert_eq!(ksflow_solver_run(s), KsflowStatus::Unconverged);
        let mut steps = 0usize;
        assert_eq!(ksflow_solver_step_count(s, &mut steps), KsflowStatus::Ok);
        assert_eq!(steps, 1);
        ksflow_solver_free(s);
    }
}

#[test]
fn stateless_helpers() {
    assert_eq!(ksflow_adaptive_dt(1e-2), 5e-2);
    assert_eq!(ksflow_adaptive_dt(9e-3), 5e-4);
    let charges = [2.0, 1.0];
    let positions = [0.0, 0.0, 0.0, 3.0, 0.0, 0.0];
    let point = [0.0, 4.0, 0.0];
    let mut v = 0.0;
    let status = unsafe { ksflow_external_potential(charges.as_ptr(), positions.as_ptr(), 2, point.as_ptr(), &mut v) };
    assert_eq!(status, KsflowStatus::Ok);
    assert!((v - (-2.0 / 4.0 - 1.0 / 5.0)).abs() < 1e-14);
    let at_nucleus = [0.0; 3];
    let status =
        unsafe { ksflow_external_potential(charges.as_ptr(), positions.as_ptr(), 2, at_nucleus.as_ptr(), &mut v) };
    assert_eq!(status, KsflowStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn long_error_messages_are_truncated() {
    let name = CString::new("not-a-preset-with-a-long-name").unwrap();
    let mut s = ptr::null_mut();
    unsafe { ksflow_solver_new_preset(name.as_ptr(), &mut s) };
    let full = unsafe { ksflow_last_error_message(ptr::null_mut(), 0) };
    let mut buf = [1 as c_char; 8];
    let n = unsafe { ksflow_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, full);
    assert_eq!(buf[7], 0);
}

#[test]
fn header_declares_the_api_and_compiles() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ksflow.h");
    let header = std::fs::read_to_string(&path).expect("header generated by build.rs");
    for name in [
        "ksflow_solver_new_preset",
        "ksflow_solver_free",
        "ksflow_solver_run",
        "ksflow_solver_energy_trace",
        "ksflow_last_error_message",
        "ksflow_external_potential",
        "KSFLOW_STATUS_UNCONVERGED",
        "typedef struct KsflowSolver KsflowSolver",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    if let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&path).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
