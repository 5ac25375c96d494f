use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ksflow::config::config_reference;

fn ksflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ksflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn solve_small(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "solve",
        "--preset",
        "he",
        "--mesh-budget",
        "300",
        "--dt",
        "0.5",
        "--out-dir",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    ksflow(&args)
}

#[test]
fn config_reference_file_is_current() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config-reference.txt");
    let on_disk = fs::read_to_string(path).expect("config-reference.txt exists");
    assert_eq!(on_disk, config_reference());
    let out = ksflow(&["config-reference"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), on_disk);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&ksflow(&[])), 1);
    assert_eq!(code(&ksflow(&["solve"])), 1);
    assert_eq!(code(&ksflow(&["solve", "--preset", "xenon"])), 1);
    assert_eq!(code(&ksflow(&["solve", "--preset", "he", "--dt", "-1"])), 1);
}

#[test]
fn bad_config_file_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "preset = \"he\"\nbogus_key = 3\n").unwrap();
    let out = ksflow(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
    assert_eq!(code(&ksflow(&["solve", "--config", "/nonexistent/run.toml"])), 1);
}

#[test]
fn unconverged_run_exits_with_two_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_small(dir.path(), &["--max-steps", "2"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "energy_trace.csv",
        "orthonormality_trace.csv",
        "density.vtk",
        "cross_section.csv",
        "summary.txt",
    ] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let trace = fs::read_to_string(dir.path().join("energy_trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "step,time,dt,energy,energy_drop,inner_iters_total");
    assert_eq!(lines.len(), 3);
    let summary = stdout(&out);
    assert!(summary.contains("converged: false"));
    assert!(summary.contains("WARNING"));
}

#[test]
fn repeated_runs_write_identical_traces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&solve_small(a.path(), &[])), 0);
    assert_eq!(code(&solve_small(b.path(), &[])), 0);
    for name in ["energy_trace.csv", "orthonormality_trace.csv", "density.vtk", "cross_section.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn linear_run_reports_oracle_energy() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_small(dir.path(), &["--disable-hartree", "--validate", "--monitors"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("hartree: off"));
    let err: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("oracle_energy_error: "))
        .and_then(|l| l.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .expect("oracle error line");
    assert!(err < 1e-4, "oracle error {err}");
    assert!(summary.contains("[PASS] scheme residual"));
    assert!(summary.contains("[PASS] component descent"));
}

#[test]
fn validate_linear_passes_on_small_mesh() {
    let out = ksflow(&["validate-linear", "--preset", "he", "--mesh-budget", "400"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).trim_end().ends_with("result: PASS"));
}

#[test]
fn check_invariants_passes() {
    let out = ksflow(&["check-invariants"]);
    let text = stdout(&out);
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.lines().count() >= 5);
    assert!(text.lines().all(|l| l.starts_with("[PASS]")));
}
