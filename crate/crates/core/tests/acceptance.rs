//! Acceptance suite: one pass/fail line per criterion, non-zero exit on any
//! failure. Run with `cargo test --release --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use ksflow::cli::{validate_linear, worst_descent, worst_energy_rise, worst_scheme_residual, MONOTONICITY_SLACK};
use ksflow::config::{Preset, RunConfig};
use ksflow::flow::{
    adaptive_dt, make_initial_waves, run, DtSchedule, FlowState, Monitors, ADAPTIVE_DT_LARGE, ADAPTIVE_DT_SMALL,
    ADAPTIVE_DT_THRESHOLD,
};
use ksflow::hartree::check_hartree_inequalities;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    fn error(e: ksflow::Error) -> Self {
        Self::new(false, format!("error: {e}"))
    }
}

fn report(id: usize, name: &str, outcome: &Outcome, started: Instant) -> bool {
    let tag = if outcome.passed { "PASS" } else { "FAIL" };
    println!(
        "[{tag}] {id}. {name}: {} ({:.1} s)",
        outcome.detail,
        started.elapsed().as_secs_f64()
    );
    outcome.passed
}

fn run_config(config: &RunConfig, monitors: Monitors) -> ksflow::Result<FlowState> {
    let system = config.build_system()?;
    let initial = make_initial_waves(&system, &config.initial_rule())?;
    run(&system, initial, &config.flow_config(monitors))
}

fn energy_stability() -> ksflow::Result<Outcome> {
    let mut worst = f64::NEG_INFINITY;
    let mut parts = Vec::new();
    for dt in [1e-4, 1e-1, 1.0, 10.0] {
        let mut config = RunConfig::preset(Preset::He);
        config.mesh_budget = 2000;
        config.dt = DtSchedule::Fixed(dt);
        config.outer_tol = f64::MIN_POSITIVE;
        config.max_steps = 50;
        let state = run_config(&config, Monitors::default())?;
        let rise = worst_energy_rise(&state);
        worst = worst.max(rise);
        parts.push(format!("dt {dt:e}: {} sweeps, worst rise {rise:.2e}", state.history.len()));
    }
    Ok(Outcome::new(worst <= MONOTONICITY_SLACK, parts.join("; ")))
}

/// One monitored LiH run at dt 0.1 serves the orthonormality, descent,
/// sweep-count and scheme-residual criteria.
fn lih_run() -> ksflow::Result<(FlowState, f64)> {
    let config = RunConfig::preset(Preset::LiH);
    let monitors = Monitors {
        descent: true,
        scheme_residual: true,
    };
    Ok((run_config(&config, monitors)?, config.inner_tol))
}

fn orthonormality(state: &FlowState) -> Outcome {
    let window = &state.history[..state.history.len().min(100)];
    let worst = window
        .iter()
        .map(|r| r.orthonormality_error)
        .fold(state.initial_orthonormality_error, f64::max);
    Outcome::new(
        window.len() == 100 && worst <= 1e-6,
        format!("max Gram deviation {worst:.3e} over {} sweeps", window.len()),
    )
}

fn descent(state: &FlowState) -> Outcome {
    let window = &state.history[..state.history.len().min(20)];
    let worst = window
        .iter()
        .flat_map(|r| &r.components)
        .filter_map(|c| c.descent.map(|d| d.violation() / d.scale()))
        .fold(f64::NEG_INFINITY, f64::max);
    let all = worst_descent(state).unwrap_or(f64::NAN);
    Outcome::new(
        window.len() == 20 && worst <= 1e-8,
        format!(
            "worst scaled violation {worst:.3e} over {} sweeps ({all:.3e} over the whole run)",
            window.len()
        ),
    )
}

fn sweep_count(state: &FlowState) -> Outcome {
    let n = state.history.len();
    Outcome::new(
        state.converged && n <= 500,
        format!(
            "converged: {}, {n} sweeps (reference run on a different mesh: 110), E = {:.10}",
            state.converged, state.energy.total
        ),
    )
}

fn scheme_residual(state: &FlowState, inner_tol: f64) -> Outcome {
    let limit = 10.0 * inner_tol;
    match worst_scheme_residual(state) {
        Some(r) => Outcome::new(
            r <= limit,
            format!("largest M-norm residual {r:.3e} (limit {limit:.0e}) over {} sweeps", state.history.len()),
        ),
        None => Outcome::new(false, "monitor produced no values"),
    }
}

fn linear_oracle() -> ksflow::Result<Outcome> {
    let mut passed = true;
    let mut parts = Vec::new();
    for preset in [Preset::He, Preset::LiH] {
        let r = validate_linear(preset, None, None)?;
        passed &= r.passed() && r.dofs <= 3000;
        parts.push(format!(
            "{} ({} dofs, {} steps): energy error {:.2e} (tol {:.2e}), angle {}",
            preset.name(),
            r.dofs,
            r.steps,
            r.energy_error,
            r.energy_tolerance,
            r.max_angle.map_or("skipped".into(), |a| format!("{a:.2e}")),
        ));
        if let Some(msg) = &r.failure {
            parts.push(msg.clone());
        }
    }
    Ok(Outcome::new(passed, parts.join("; ")))
}

fn hartree_inequalities() -> ksflow::Result<Outcome> {
    let mut config = RunConfig::preset(Preset::He);
    config.mesh_budget = 1000;
    let system = config.build_system()?;
    let solver = system.hartree_solver().expect("Hartree term enabled");
    let r = check_hartree_inequalities(solver, 100, 7)?;
    Ok(Outcome::new(
        r.pairs == 100 && r.passes(1e-10, 1e-12),
        format!(
            "{} pairs: monotonicity {:.2e}, energy bound {:.2e}, definiteness {:.2e}",
            r.pairs, r.worst_monotonicity, r.worst_energy_bound, r.worst_definiteness
        ),
    ))
}

fn adaptive_rule() -> Outcome {
    let cases = [(0.5, 5e-2), (1e-2, 5e-2), (-1e-2, 5e-2), (9.999e-3, 5e-4), (1e-3, 5e-4), (0.0, 5e-4)];
    let ok = ADAPTIVE_DT_LARGE == 5e-2
        && ADAPTIVE_DT_SMALL == 5e-4
        && ADAPTIVE_DT_THRESHOLD == 1e-2
        && cases.iter().all(|&(drop, dt)| adaptive_dt(drop) == dt);
    Outcome::new(ok, format!("{} cases, threshold 1e-2 inclusive", cases.len()))
}

fn refinement_trend() -> ksflow::Result<Outcome> {
    let mut energies = Vec::new();
    let mut parts = Vec::new();
    for budget in [1000, 3000, 8000] {
        let mut config = RunConfig::preset(Preset::He);
        config.mesh_budget = budget;
        config.dt = DtSchedule::Fixed(0.1);
        config.max_steps = 2000;
        let system = config.build_system()?;
        let dofs = system.dim();
        let initial = make_initial_waves(&system, &config.initial_rule())?;
        let state = run(&system, initial, &config.flow_config(Monitors::default()))?;
        if !state.converged {
            return Ok(Outcome::new(false, format!("{dofs} dofs did not converge")));
        }
        energies.push(state.energy.total);
        parts.push(format!("{dofs} dofs: E = {:.8} ({} sweeps)", state.energy.total, state.history.len()));
    }
    let reversal = energies.windows(2).any(|w| w[1] > w[0]);
    if reversal {
        parts.push("WARNING: energy rose under refinement".into());
    } else {
        parts.push("non-increasing".into());
    }
    Ok(Outcome::new(true, parts.join("; ")))
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut all = true;

    let t = Instant::now();
    all &= report(1, "energy stability", &energy_stability().unwrap_or_else(Outcome::error), t);

    let t = Instant::now();
    match lih_run() {
        Ok((state, inner_tol)) => {
            all &= report(2, "orthonormality preservation", &orthonormality(&state), t);
            all &= report(5, "per-component descent", &descent(&state), t);
            all &= report(6, "sweep count", &sweep_count(&state), t);
            all &= report(8, "discrete-scheme residual", &scheme_residual(&state, inner_tol), t);
        }
        Err(e) => {
            for (id, name) in [
                (2, "orthonormality preservation"),
                (5, "per-component descent"),
                (6, "sweep count"),
                (8, "discrete-scheme residual"),
            ] {
                all &= report(id, name, &Outcome::new(false, format!("LiH run failed: {e}")), t);
            }
        }
    }

    let t = Instant::now();
    all &= report(3, "linear oracle", &linear_oracle().unwrap_or_else(Outcome::error), t);

    let t = Instant::now();
    all &= report(4, "Coulomb form inequalities", &hartree_inequalities().unwrap_or_else(Outcome::error), t);

    let t = Instant::now();
    all &= report(7, "adaptive step rule", &adaptive_rule(), t);

    let t = Instant::now();
    all &= report(9, "mesh refinement trend", &refinement_trend().unwrap_or_else(Outcome::error), t);

    println!("acceptance: {}", if all { "PASS" } else { "FAIL" });
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
