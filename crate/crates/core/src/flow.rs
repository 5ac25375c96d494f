//! Component-wise modified-midpoint gradient flow.
//!
//! One sweep updates the orbitals in ascending order. Orbital `k` solves
//!
//! ```text
//! M (x - ψⁿ)/Δt = -c₀² H ψ½ + c₁ M ψ½ + c₀² Σ_{l≠k} g_l M ψ_l,
//! ψ½ = (ψⁿ + x)/2,  c₀² = ψ½ᵀMψ½,  c₁ = ψ½ᵀHψ½,  g_l = ψ½ᵀHψ_l,
//! ```
//!
//! where `ψ_l` is already updated for `l < k` and `H` is built from that
//! mixed configuration with orbital `k` at `x`. The nonlinearity in `x` is
//! resolved by a fixed-point iteration that freezes `H` and the
//! coefficients at the previous iterate, leaving one symmetric linear
//! system per iteration. At a fixed point the update preserves
//! M-orthonormality and does not increase the energy for any `Δt`.

use std::sync::Arc;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hamiltonian::{EnergyBreakdown, HamiltonianMatrix, KohnShamSystem, OrbitalTag, WaveFunctionSet};
use crate::hartree::HartreePotential;
use crate::linalg::{solve_sparse_symmetric_from, solve_spd, SolveReport};
use crate::sparse::{axpy, dot, SparseSymMatrix};

pub const ADAPTIVE_DT_LARGE: f64 = 5e-2;
pub const ADAPTIVE_DT_SMALL: f64 = 5e-4;
pub const ADAPTIVE_DT_THRESHOLD: f64 = 1e-2;

pub const DEFAULT_ANDERSON_DEPTH: usize = 5;

/// Relative residual for the per-iteration component solve.
pub const COMPONENT_SOLVE_TOL: f64 = 1e-12;

/// Two-level step-size rule: large steps while the energy still drops by
/// at least the threshold, small steps afterwards.
pub fn adaptive_dt(last_energy_drop: f64) -> f64 {
    if last_energy_drop.abs() >= ADAPTIVE_DT_THRESHOLD {
        ADAPTIVE_DT_LARGE
    } else {
        ADAPTIVE_DT_SMALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtSchedule {
    Fixed(f64),
    /// [`adaptive_dt`] applied to the previous sweep's energy drop; the
    /// first sweep uses the large step.
    Adaptive,
}

impl DtSchedule {
    fn dt_for(self, last_drop: Option<f64>) -> f64 {
        match self {
            Self::Fixed(dt) => dt,
            Self::Adaptive => last_drop.map_or(ADAPTIVE_DT_LARGE, adaptive_dt),
        }
    }
}

/// Optional per-component diagnostics. Both cost extra Hamiltonian builds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Monitors {
    /// Per-component descent inequality.
    pub descent: bool,
    /// Residual of the converged pair in the discrete scheme.
    pub scheme_residual: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub dt: DtSchedule,
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub inner_max: usize,
    /// History depth of the Anderson mixing applied to the fixed-point map;
    /// 0 gives the plain iteration.
    pub anderson_depth: usize,
    pub max_steps: usize,
    pub monitors: Monitors,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt: DtSchedule::Fixed(1e-1),
            outer_tol: 1e-6,
            inner_tol: 1e-8,
            inner_max: 200,
            anderson_depth: DEFAULT_ANDERSON_DEPTH,
            max_steps: 1000,
            monitors: Monitors::default(),
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::Config(format!("{what} must be positive and finite, got {v}"));
        if let DtSchedule::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(bad("dt", dt));
            }
        }
        if !(self.outer_tol > 0.0 && self.outer_tol.is_finite()) {
            return Err(bad("outer_tol", self.outer_tol));
        }
        if !(self.inner_tol > 0.0 && self.inner_tol.is_finite()) {
            return Err(bad("inner_tol", self.inner_tol));
        }
        if self.inner_max == 0 {
            return Err(Error::Config("inner_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one orbital update.
#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub orbital: usize,
    pub inner_iterations: usize,
    /// M-norm of the last fixed-point increment.
    pub last_increment: f64,
    /// `1/Δt - c₁/2` at the last iteration.
    pub shift: f64,
    pub solve: SolveReport,
    /// Largest `|⟨ψ_k, ψ_l⟩|` over `l ≠ k` after the update.
    pub cross_overlap: f64,
    pub descent: Option<DescentCheck>,
    /// M⁻¹-norm of the discrete-scheme residual at the converged pair.
    pub scheme_residual: Option<f64>,
}

/// `(E(Ψ_k) - E(Ψ_{k-1}))/(2Δt)` against `⟨H(Ψ_k) ψ½, (ψ_k^{n+1} - ψ_kⁿ)/Δt⟩`.
#[derive(Debug, Clone, Copy)]
pub struct DescentCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub energy_before: f64,
    pub energy_after: f64,
}

impl DescentCheck {
    /// `lhs - rhs`, which is non-positive in exact arithmetic.
    pub fn violation(&self) -> f64 {
        self.lhs - self.rhs
    }

    pub fn scale(&self) -> f64 {
        self.lhs.abs().max(self.rhs.abs()).max(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub energy: EnergyBreakdown,
    /// `Eⁿ - Eⁿ⁺¹`.
    pub energy_drop: f64,
    pub orthonormality_error: f64,
    pub components: Vec<ComponentReport>,
}

impl StepRecord {
    pub fn inner_iterations(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.inner_iterations).collect()
    }

    pub fn inner_iterations_total(&self) -> usize {
        self.components.iter().map(|c| c.inner_iterations).sum()
    }
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub step: usize,
    pub time: f64,
    pub waves: WaveFunctionSet,
    pub energy: EnergyBreakdown,
    pub initial_energy: EnergyBreakdown,
    pub initial_orthonormality_error: f64,
    pub history: Vec<StepRecord>,
    pub converged: bool,
    hartree_guess: Option<HartreePotential>,
}

impl FlowState {
    pub fn new(system: &KohnShamSystem, waves: WaveFunctionSet) -> Result<Self> {
        let (energy, hartree_guess) = system.total_energy_with(&waves.as_slices(), None)?;
        let err = waves.orthonormality_error();
        Ok(Self {
            step: 0,
            time: 0.0,
            waves,
            energy,
            initial_energy: energy,
            initial_orthonormality_error: err,
            history: Vec::new(),
            converged: false,
            hartree_guess,
        })
    }

    pub fn last_energy_drop(&self) -> Option<f64> {
        self.history.last().map(|r| r.energy_drop)
    }
}

/// The linear system of one fixed-point iteration.
#[derive(Debug, Clone)]
pub struct ComponentSystem {
    pub matrix: SparseSymMatrix,
    pub rhs: Vec<f64>,
    pub shift: f64,
    pub c0_sq: f64,
    pub c1: f64,
}

/// Coefficients `c₀², c₁, g_l` of the scheme at a given midpoint.
fn scheme_coefficients(
    mass: &SparseSymMatrix,
    h: &SparseSymMatrix,
    half: &[f64],
    others: &[&[f64]],
) -> (f64, f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let m_half = mass.mul_vec(half);
    let h_half = h.mul_vec(half);
    let c0_sq = dot(half, &m_half);
    let c1 = dot(half, &h_half);
    let g = others.iter().map(|o| dot(&h_half, o)).collect();
    (c0_sq, c1, g, m_half, h_half)
}

fn midpoint(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

/// Assembles `[(1/Δt - c₁/2)M + (c₀²/2)H] x = (1/Δt + c₁/2)Mψⁿ - (c₀²/2)Hψⁿ + c₀² Σ g_l Mψ_l`
/// with the coefficients taken at `ψ½ = (ψⁿ + iterate)/2`. `others` holds
/// every orbital except `k`, in the mixed configuration.
pub fn component_system(
    mass: &SparseSymMatrix,
    h: &HamiltonianMatrix,
    psi_n: &[f64],
    iterate: &[f64],
    others: &[&[f64]],
    dt: f64,
) -> Result<ComponentSystem> {
    let hm = h.matrix();
    let half = midpoint(psi_n, iterate);
    let (c0_sq, c1, g, _, _) = scheme_coefficients(mass, hm, &half, others);
    let shift = 1.0 / dt - 0.5 * c1;
    let matrix = SparseSymMatrix::linear_combination(&[(shift, mass), (0.5 * c0_sq, hm)])?;
    let m_psi = mass.mul_vec(psi_n);
    let h_psi = hm.mul_vec(psi_n);
    let mut rhs: Vec<f64> = m_psi
        .iter()
        .zip(&h_psi)
        .map(|(m, h)| (1.0 / dt + 0.5 * c1) * m - 0.5 * c0_sq * h)
        .collect();
    let mut comb = vec![0.0; psi_n.len()];
    for (gl, o) in g.iter().zip(others) {
        axpy(c0_sq * gl, o, &mut comb);
    }
    axpy(1.0, &mass.mul_vec(&comb), &mut rhs);
    Ok(ComponentSystem {
        matrix,
        rhs,
        shift,
        c0_sq,
        c1,
    })
}

/// One fixed-point iteration: returns `ψ^{n+1,j+1}`.
pub fn solve_component_linear_system(
    mass: &SparseSymMatrix,
    h: &HamiltonianMatrix,
    orbital: usize,
    psi_n: &[f64],
    iterate: &[f64],
    others: &[&[f64]],
    dt: f64,
) -> Result<(Vec<f64>, SolveReport, f64)> {
    let sys = component_system(mass, h, psi_n, iterate, others, dt)?;
    match solve_sparse_symmetric_from(&sys.matrix, &sys.rhs, Some(iterate), COMPONENT_SOLVE_TOL) {
        Ok((x, report)) => Ok((x, report, sys.shift)),
        Err(Error::SolveFailed { .. }) => Err(Error::SingularComponentSystem {
            orbital,
            shift: sys.shift,
        }),
        Err(e) => Err(e),
    }
}

/// Residual of the fully discrete scheme at `(ψⁿ, x)` in the M⁻¹ norm, with
/// `H` and all coefficients evaluated at the converged configuration.
pub fn scheme_residual(
    mass: &SparseSymMatrix,
    h: &HamiltonianMatrix,
    psi_n: &[f64],
    x: &[f64],
    others: &[&[f64]],
    dt: f64,
) -> Result<f64> {
    let hm = h.matrix();
    let half = midpoint(psi_n, x);
    let (c0_sq, c1, g, m_half, h_half) = scheme_coefficients(mass, hm, &half, others);
    let diff: Vec<f64> = x.iter().zip(psi_n).map(|(a, b)| (a - b) / dt).collect();
    let mut r = mass.mul_vec(&diff);
    axpy(c0_sq, &h_half, &mut r);
    axpy(-c1, &m_half, &mut r);
    let mut comb = vec![0.0; x.len()];
    for (gl, o) in g.iter().zip(others) {
        axpy(c0_sq * gl, o, &mut comb);
    }
    axpy(-1.0, &mass.mul_vec(&comb), &mut r);
    let (z, _) = solve_spd(mass, &r, None, 1e-14)?;
    Ok(dot(&r, &z).max(0.0).sqrt())
}

/// Anderson mixing for the fixed-point map `y -> G(y)`.
///
/// The next iterate is `G(y_j) - ΔX γ` with `γ` minimizing
/// `‖f_j - ΔF γ‖_M`, where `f = G(y) - y` and `ΔX`, `ΔF` hold the most
/// recent differences of `G` values and residuals. Fixed points are those
/// of the plain iteration; only the path to them changes.
struct Anderson {
    depth: usize,
    dx: Vec<Vec<f64>>,
    df: Vec<Vec<f64>>,
    last: Option<(Vec<f64>, Vec<f64>)>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            dx: Vec::new(),
            df: Vec::new(),
            last: None,
        }
    }

    fn next(&mut self, mass: &SparseSymMatrix, g: Vec<f64>, f: Vec<f64>) -> Vec<f64> {
        if self.depth == 0 {
            return g;
        }
        if let Some((g_prev, f_prev)) = self.last.take() {
            self.dx.push(g.iter().zip(&g_prev).map(|(a, b)| a - b).collect());
            self.df.push(f.iter().zip(&f_prev).map(|(a, b)| a - b).collect());
            if self.dx.len() > self.depth {
                self.dx.remove(0);
                self.df.remove(0);
            }
        }
        let m = self.df.len();
        let mut next = g.clone();
        if m > 0 {
            let mdf: Vec<Vec<f64>> = self.df.iter().map(|d| mass.mul_vec(d)).collect();
            let gram = DMatrix::from_fn(m, m, |a, b| dot(&self.df[a], &mdf[b]));
            let rhs = DVector::from_fn(m, |a, _| dot(&mdf[a], &f));
            let eps = 1e-14 * gram.norm();
            let gamma = gram
                .svd(true, true)
                .solve(&rhs, eps)
                .ok()
                .filter(|g| g.iter().all(|v| v.is_finite()));
            match gamma {
                Some(gamma) => {
                    for (a, dx) in self.dx.iter().enumerate() {
                        axpy(-gamma[a], dx, &mut next);
                    }
                }
                None => {
                    self.dx.clear();
                    self.df.clear();
                }
            }
        }
        self.last = Some((g, f));
        next
    }
}

fn tags_for(n: usize, k: usize, j: usize) -> Vec<OrbitalTag> {
    (0..n)
        .map(|l| match l.cmp(&k) {
            std::cmp::Ordering::Less => OrbitalTag::New,
            std::cmp::Ordering::Equal => OrbitalTag::Inner(j),
            std::cmp::Ordering::Greater => OrbitalTag::Old,
        })
        .collect()
}

/// Converged fixed point of one orbital update.
struct FixedPoint {
    x: Vec<f64>,
    iterations: usize,
    increment: f64,
    shift: f64,
    solve: SolveReport,
}

/// Runs the (Anderson-mixed) fixed-point iteration for orbital `k` from
/// `start` until the M-norm increment drops below `inner_tol`. A candidate
/// that passes the increment test is accepted once `Δt` times its scheme
/// residual, evaluated with the Hamiltonian rebuilt at the candidate, is
/// below `inner_tol` as well; otherwise that Hamiltonian drives the next
/// iteration. Near an indefinite shift the map can be steep enough that a
/// small increment alone leaves a large residual.
#[allow(clippy::too_many_arguments)]
fn fixed_point(
    system: &KohnShamSystem,
    state: &mut FlowState,
    k: usize,
    psi_n: &[f64],
    start: Vec<f64>,
    dt: f64,
    config: &FlowConfig,
) -> Result<FixedPoint> {
    let mass = system.mass().clone();
    let n = state.waves.len();
    let mut iterate = start;
    let mut anderson = Anderson::new(config.anderson_depth);
    let mut best = (f64::INFINITY, 0);
    let mut candidate: Option<(f64, f64, SolveReport)> = None;
    for j in 0..config.inner_max {
        let others: Vec<&[f64]> = (0..n).filter(|&l| l != k).map(|l| state.waves.wave(l)).collect();
        let h = {
            let mut config_waves: Vec<&[f64]> = state.waves.as_slices();
            config_waves[k] = &iterate;
            system.build_hamiltonian(&config_waves, tags_for(n, k, j), state.hartree_guess.as_ref())?
        };
        debug_assert_eq!(h.built_from()[k], OrbitalTag::Inner(j));
        if let Some(v) = h.hartree_potential() {
            state.hartree_guess = Some(v.clone());
        }
        if let Some((increment, shift, solve)) = candidate.take() {
            let r = scheme_residual(&mass, &h, psi_n, &iterate, &others, dt)?;
            if dt * r <= config.inner_tol {
                return Ok(FixedPoint {
                    x: iterate,
                    iterations: j,
                    increment,
                    shift,
                    solve,
                });
            }
            debug!("orbital {k} iteration {j}: candidate rejected, scheme residual {r:.3e}");
        }
        let (x, solve, shift) = solve_component_linear_system(&mass, &h, k, psi_n, &iterate, &others, dt)?;
        let residual: Vec<f64> = x.iter().zip(&iterate).map(|(a, b)| a - b).collect();
        let increment = mass.quad_form(&residual).max(0.0).sqrt();
        debug!("orbital {k} dt {dt:.3e} iteration {j}: increment {increment:.3e}, shift {shift:.3e}");
        if increment < best.0 {
            best = (increment, j);
        }
        if increment <= config.inner_tol {
            candidate = Some((increment, shift, solve));
            iterate = x;
            continue;
        }
        let stalled = j >= best.1 + STALL_WINDOW;
        if !(increment < DIVERGENCE_LIMIT) || stalled || j + 1 == config.inner_max {
            if stalled {
                debug!("orbital {k}: no progress in {STALL_WINDOW} iterations, best increment {:.3e}", best.0);
            }
            return Err(Error::InnerIterationLimit {
                orbital: k,
                iterations: j + 1,
                increment,
            });
        }
        iterate = anderson.next(&mass, x, residual);
    }
    Err(Error::InnerIterationLimit {
        orbital: k,
        iterations: config.inner_max,
        increment: best.0,
    })
}

/// Iterations without a new smallest increment after which the iteration
/// is abandoned in favour of continuation.
const STALL_WINDOW: usize = 25;

/// Increment beyond which an iteration on normalized orbitals is treated
/// as divergent.
const DIVERGENCE_LIMIT: f64 = 1e8;

/// Smallest continuation increment, relative to the target step.
const MIN_CONTINUATION_FRACTION: f64 = 1.0 / 4096.0;

/// Solves the update at `dt`. When the iteration started from `ψⁿ` fails,
/// the solution is tracked from a short step up to `dt` instead: each
/// converged solution at a smaller step becomes the starting iterate for a
/// larger one. The equations solved at `dt` are unchanged. Returns the fixed
/// point and the total iteration count.
fn solve_update(
    system: &KohnShamSystem,
    state: &mut FlowState,
    k: usize,
    psi_n: &[f64],
    dt: f64,
    config: &FlowConfig,
) -> Result<(FixedPoint, usize)> {
    let guess = state.hartree_guess.clone();
    let first = match fixed_point(system, state, k, psi_n, psi_n.to_vec(), dt, config) {
        Ok(fp) => {
            let it = fp.iterations;
            return Ok((fp, it));
        }
        Err(e @ (Error::InnerIterationLimit { .. } | Error::SingularComponentSystem { .. })) => e,
        Err(e) => return Err(e),
    };
    debug!("orbital {k}: no fixed point from ψⁿ at dt {dt:.3e} ({first}); tracking from a shorter step");
    let mut total = spent(&first);
    let mut reached = 0.0;
    let mut start = psi_n.to_vec();
    let mut trial = 0.5 * dt;
    loop {
        state.hartree_guess = guess.clone();
        match fixed_point(system, state, k, psi_n, start.clone(), trial, config) {
            Ok(fp) => {
                total += fp.iterations;
                if trial >= dt {
                    return Ok((fp, total));
                }
                debug!("orbital {k}: continuation reached dt {trial:.4e}");
                let advance = trial - reached;
                reached = trial;
                start = fp.x;
                trial = (reached + 2.0 * advance).min(dt);
            }
            Err(e @ (Error::InnerIterationLimit { .. } | Error::SingularComponentSystem { .. })) => {
                total += spent(&e);
                let advance = 0.5 * (trial - reached);
                if advance < MIN_CONTINUATION_FRACTION * dt {
                    return Err(e);
                }
                trial = reached + advance;
            }
            Err(e) => return Err(e),
        }
    }
}

fn spent(e: &Error) -> usize {
    match e {
        Error::InnerIterationLimit { iterations, .. } => *iterations,
        _ => 1,
    }
}

/// Updates orbital `k` of `state.waves` in place, assuming orbitals
/// `0..k` already hold their new values.
pub fn step_component(
    system: &KohnShamSystem,
    state: &mut FlowState,
    k: usize,
    dt: f64,
    config: &FlowConfig,
) -> Result<ComponentReport> {
    let mass = system.mass().clone();
    let n = state.waves.len();
    let psi_n = state.waves.wave(k).to_vec();
    let energy_before = if config.monitors.descent {
        Some(system.total_energy_with(&state.waves.as_slices(), state.hartree_guess.as_ref())?.0.total)
    } else {
        None
    };
    let (fp, iterations) = solve_update(system, state, k, &psi_n, dt, config)?;
    state.waves.set_wave(k, fp.x);
    let mut report = ComponentReport {
        orbital: k,
        inner_iterations: iterations,
        last_increment: fp.increment,
        shift: fp.shift,
        solve: fp.solve,
        cross_overlap: 0.0,
        descent: None,
        scheme_residual: None,
    };
    let mk = mass.mul_vec(state.waves.wave(k));
    for l in (0..n).filter(|&l| l != k) {
        report.cross_overlap = report.cross_overlap.max(dot(&mk, state.waves.wave(l)).abs());
    }
    if config.monitors.descent || config.monitors.scheme_residual {
        let slices = state.waves.as_slices();
        let tags = (0..n).map(|l| if l <= k { OrbitalTag::New } else { OrbitalTag::Old }).collect();
        let h_new = system.build_hamiltonian(&slices, tags, state.hartree_guess.as_ref())?;
        let x = state.waves.wave(k);
        if let Some(e_before) = energy_before {
            let e_after = system.total_energy_with(&slices, state.hartree_guess.as_ref())?.0.total;
            let half = midpoint(&psi_n, x);
            let step: Vec<f64> = x.iter().zip(&psi_n).map(|(a, b)| (a - b) / dt).collect();
            report.descent = Some(DescentCheck {
                lhs: (e_after - e_before) / (2.0 * dt),
                rhs: h_new.matrix().bilinear(&half, &step),
                energy_before: e_before,
                energy_after: e_after,
            });
        }
        if config.monitors.scheme_residual {
            let others: Vec<&[f64]> = (0..n).filter(|&l| l != k).map(|l| state.waves.wave(l)).collect();
            report.scheme_residual = Some(scheme_residual(&mass, &h_new, &psi_n, x, &others, dt)?);
        }
    }
    Ok(report)
}

/// One Gauss-Seidel pass over all orbitals. On error the state is left
/// unchanged.
pub fn sweep(system: &KohnShamSystem, state: &mut FlowState, dt: f64, config: &FlowConfig) -> Result<()> {
    let saved_waves = state.waves.clone();
    let saved_guess = state.hartree_guess.clone();
    let mut components = Vec::with_capacity(state.waves.len());
    for k in 0..state.waves.len() {
        match step_component(system, state, k, dt, config) {
            Ok(r) => components.push(r),
            Err(e) => {
                state.waves = saved_waves;
                state.hartree_guess = saved_guess;
                return Err(e);
            }
        }
    }
    let (energy, guess) = system.total_energy_with(&state.waves.as_slices(), state.hartree_guess.as_ref())?;
    if guess.is_some() {
        state.hartree_guess = guess;
    }
    let drop = state.energy.total - energy.total;
    state.step += 1;
    state.time += dt;
    state.energy = energy;
    state.history.push(StepRecord {
        step: state.step,
        time: state.time,
        dt,
        energy,
        energy_drop: drop,
        orthonormality_error: state.waves.orthonormality_error(),
        components,
    });
    Ok(())
}

/// Runs sweeps until `|ΔE| ≤ outer_tol` or `max_steps`. A singular
/// component system is retried once with `0.9 Δt`.
pub fn run(system: &KohnShamSystem, initial: WaveFunctionSet, config: &FlowConfig) -> Result<FlowState> {
    config.validate()?;
    let mut state = FlowState::new(system, initial)?;
    while state.step < config.max_steps {
        let dt = config.dt.dt_for(state.last_energy_drop());
        match sweep(system, &mut state, dt, config) {
            Ok(()) => {}
            Err(Error::SingularComponentSystem { orbital, shift }) => {
                warn!("singular system for orbital {orbital} (shift {shift:.3e}); retrying with 0.9 dt");
                sweep(system, &mut state, 0.9 * dt, config)?;
            }
            Err(e) => return Err(e),
        }
        let rec = state.history.last().unwrap();
        info!(
            "step {:4} dt {:.1e} energy {:.12} drop {:.3e} orth {:.2e} inner {:?}",
            rec.step,
            rec.dt,
            rec.energy.total,
            rec.energy_drop,
            rec.orthonormality_error,
            rec.inner_iterations()
        );
        if rec.energy_drop.abs() <= config.outer_tol {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}

pub fn orthonormality_error(waves: &WaveFunctionSet) -> f64 {
    waves.orthonormality_error()
}

/// Rules for the initial orbitals.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialRule {
    /// `exp(-2|r - R₁| + 0.5)` about the first nucleus, normalized.
    Exponential,
    /// Unit coefficient vectors at the interior nodes nearest the nuclei
    /// (cycling through them), no two in a common element.
    UnitVectors(usize),
    /// The exponential about the first nucleus followed by `n - 1` unit
    /// vectors.
    ExponentialThenUnit(usize),
    /// Independent uniform random coefficients.
    Random { n: usize, seed: u64 },
}

impl InitialRule {
    pub fn orbital_count(&self) -> usize {
        match *self {
            Self::Exponential => 1,
            Self::UnitVectors(n) | Self::ExponentialThenUnit(n) => n,
            Self::Random { n, .. } => n,
        }
    }
}

/// Modified Gram-Schmidt in the M inner product, applied twice.
pub fn m_orthonormalize(mass: &SparseSymMatrix, waves: &mut [Vec<f64>]) -> Result<()> {
    for _pass in 0..2 {
        for i in 0..waves.len() {
            let (done, rest) = waves.split_at_mut(i);
            let v = &mut rest[0];
            for u in done.iter() {
                let c = mass.bilinear(u, v);
                axpy(-c, u, v);
            }
            let nrm = mass.quad_form(v).max(0.0).sqrt();
            if !(nrm > 1e-300) || !nrm.is_finite() {
                return Err(Error::Config(format!("initial orbital {i} is linearly dependent")));
            }
            v.iter_mut().for_each(|x| *x /= nrm);
        }
    }
    Ok(())
}

fn exponential_orbital(system: &KohnShamSystem) -> Vec<f64> {
    let mesh = system.mesh();
    let r1 = system.nuclei().nuclei()[0].position;
    (0..system.dim())
        .map(|d| {
            let p = mesh.nodes()[mesh.node_of_dof(d)];
            let r = (0..3).map(|a| (p[a] - r1[a]).powi(2)).sum::<f64>().sqrt();
            (-2.0 * r + 0.5).exp()
        })
        .collect()
}

/// Interior dofs ordered by distance to `target`, ties by index.
fn dofs_by_distance(system: &KohnShamSystem, target: [f64; 3]) -> Vec<usize> {
    let mesh = system.mesh();
    let dist = |d: usize| {
        let p = mesh.nodes()[mesh.node_of_dof(d)];
        (0..3).map(|a| (p[a] - target[a]).powi(2)).sum::<f64>()
    };
    let mut order: Vec<usize> = (0..system.dim()).collect();
    order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
    order
}

/// Picks `count` interior nodes, the `i`-th as close as possible to nucleus
/// `(first + i) mod n_nuclei`, such that no two chosen nodes share an element.
fn separated_dofs(system: &KohnShamSystem, count: usize, first: usize) -> Result<Vec<usize>> {
    let mesh = system.mesh();
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); mesh.node_count()];
    for t in mesh.tets() {
        for &a in t {
            neighbours[a].extend_from_slice(t);
        }
    }
    let mut blocked = vec![false; mesh.node_count()];
    let nuclei = system.nuclei().nuclei();
    let mut chosen = Vec::with_capacity(count);
    for i in 0..count {
        let target = nuclei[(first + i) % nuclei.len()].position;
        let pick = dofs_by_distance(system, target)
            .into_iter()
            .find(|&d| !blocked[mesh.node_of_dof(d)])
            .ok_or_else(|| Error::Config(format!("no admissible node left for initial orbital {i}")))?;
        for &nb in &neighbours[mesh.node_of_dof(pick)] {
            blocked[nb] = true;
        }
        chosen.push(pick);
    }
    Ok(chosen)
}

fn unit_vector(dim: usize, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[d] = 1.0;
    v
}

/// Builds and M-orthonormalizes the initial orbitals.
pub fn make_initial_waves(system: &KohnShamSystem, rule: &InitialRule) -> Result<WaveFunctionSet> {
    let dim = system.dim();
    let mut waves: Vec<Vec<f64>> = match *rule {
        InitialRule::Exponential => vec![exponential_orbital(system)],
        InitialRule::UnitVectors(n) => separated_dofs(system, n, 0)?
            .into_iter()
            .map(|d| unit_vector(dim, d))
            .collect(),
        InitialRule::ExponentialThenUnit(n) => {
            let mut w = vec![exponential_orbital(system)];
            // Unit vectors start at the second nucleus, away from the
            // exponential's peak.
            let extra = separated_dofs(system, n.saturating_sub(1), 1)?;
            w.extend(extra.into_iter().map(|d| unit_vector(dim, d)));
            w
        }
        InitialRule::Random { n, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| (0..dim).map(|_| rng.random::<f64>() - 0.5).collect())
                .collect()
        }
    };
    if waves.is_empty() {
        return Err(Error::Config("at least one orbital is required".into()));
    }
    m_orthonormalize(system.mass(), &mut waves)?;
    WaveFunctionSet::new(waves, Arc::clone(system.mass()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{NuclearConfig, Nucleus};
    use crate::hartree::HartreeBoundary;
    use crate::linalg::dense_generalized_eig;
    use crate::mesh::{build_graded_box_mesh, BoxDomain, GradingFunction};

    fn system(half: f64, h: f64, nuclei: Vec<Nucleus>, hartree: bool) -> KohnShamSystem {
        let domain = BoxDomain::cube(half).unwrap();
        let mesh = build_graded_box_mesh(&domain, &GradingFunction::Uniform { h }, 1_000_000).unwrap();
        let nuclei = NuclearConfig::new(nuclei, &domain).unwrap();
        KohnShamSystem::new(Arc::new(mesh), nuclei, hartree.then_some(HartreeBoundary::MonopoleRobin)).unwrap()
    }

    fn helium(hartree: bool) -> KohnShamSystem {
        system(
            4.0,
            0.8,
            vec![Nucleus {
                charge: 2.0,
                position: [0.0; 3],
            }],
            hartree,
        )
    }

    fn lowest_eigvecs(sys: &KohnShamSystem, n: usize) -> Vec<Vec<f64>> {
        let eig = dense_generalized_eig(&sys.linear_hamiltonian().to_dense(), &sys.mass().to_dense()).unwrap();
        (0..n).map(|i| eig.vectors.column(i).iter().copied().collect()).collect()
    }

    #[test]
    fn adaptive_rule_levels() {
        assert_eq!(adaptive_dt(0.5), 5e-2);
        assert_eq!(adaptive_dt(1e-2), 5e-2);
        assert_eq!(adaptive_dt(-1e-2), 5e-2);
        assert_eq!(adaptive_dt(1e-3), 5e-4);
        assert_eq!(adaptive_dt(0.0), 5e-4);
        assert_eq!(DtSchedule::Adaptive.dt_for(None), 5e-2);
    }

    #[test]
    fn config_validation() {
        assert!(FlowConfig::default().validate().is_ok());
        let bad = FlowConfig {
            inner_tol: 0.0,
            ..FlowConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FlowConfig {
            dt: DtSchedule::Fixed(-1.0),
            ..FlowConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn eigenvector_is_fixed_point() {
        let sys = helium(false);
        let v = lowest_eigvecs(&sys, 1).remove(0);
        let h = sys.build_hamiltonian(&[&v], vec![OrbitalTag::Inner(0)], None).unwrap();
        let (x, _, _) = solve_component_linear_system(sys.mass(), &h, 0, &v, &v, &[], 0.1).unwrap();
        let diff: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - b).collect();
        assert!(sys.mass().quad_form(&diff).sqrt() < 1e-9);

        let waves = WaveFunctionSet::new(vec![v], sys.mass().clone()).unwrap();
        let mut state = FlowState::new(&sys, waves).unwrap();
        let rep = step_component(&sys, &mut state, 0, 0.1, &FlowConfig::default()).unwrap();
        assert_eq!(rep.inner_iterations, 1);
    }

    #[test]
    fn component_matrix_is_symmetric() {
        let sys = helium(true);
        let w = make_initial_waves(&sys, &InitialRule::Exponential).unwrap();
        let h = sys.hamiltonian_of(&w).unwrap();
        let cs = component_system(sys.mass(), &h, w.wave(0), w.wave(0), &[], 1.0).unwrap();
        assert_eq!(cs.matrix.max_asymmetry(), 0.0);
    }

    #[test]
    fn small_dt_slope_matches_gradient() {
        let sys = helium(false);
        let w = make_initial_waves(&sys, &InitialRule::Random { n: 1, seed: 3 }).unwrap();
        let psi = w.wave(0);
        let h = sys.build_hamiltonian(&[psi], vec![OrbitalTag::Inner(0)], None).unwrap();
        // Semi-discrete right side at ψⁿ: M⁻¹(c₁Mψ - c₀²Hψ).
        let hp = h.matrix().mul_vec(psi);
        let c0 = sys.mass().quad_form(psi);
        let c1 = dot(psi, &hp);
        let mut f: Vec<f64> = sys.mass().mul_vec(psi).iter().map(|m| c1 * m).collect();
        axpy(-c0, &hp, &mut f);
        let (grad, _) = solve_spd(sys.mass(), &f, None, 1e-14).unwrap();
        for dt in [1e-5, 1e-6] {
            let (x, _, _) = solve_component_linear_system(sys.mass(), &h, 0, psi, psi, &[], dt).unwrap();
            let slope: Vec<f64> = x.iter().zip(psi).zip(&grad).map(|((a, b), g)| (a - b) / dt - g).collect();
            let err = sys.mass().quad_form(&slope).sqrt();
            let scale = sys.mass().quad_form(&grad).sqrt();
            assert!(err <= 1e-2 * scale, "dt {dt}: {err} vs {scale}");
        }
    }

    #[test]
    fn helium_first_step_and_invariants() {
        let sys = helium(true);
        let w = make_initial_waves(&sys, &InitialRule::Exponential).unwrap();
        let cfg = FlowConfig {
            dt: DtSchedule::Fixed(1e-1),
            max_steps: 5,
            monitors: Monitors {
                descent: true,
                scheme_residual: true,
            },
            ..FlowConfig::default()
        };
        let state = run(&sys, w, &cfg).unwrap();
        let mut prev = state.initial_energy.total;
        for rec in &state.history {
            assert!(rec.energy.total <= prev + 1e-10 * (1.0 + prev.abs()));
            assert!(rec.orthonormality_error <= 100.0 * cfg.inner_tol);
            let c = &rec.components[0];
            let d = c.descent.unwrap();
            assert!(d.violation() <= 1e-8 * d.scale(), "{d:?}");
            assert!(c.scheme_residual.unwrap() <= 10.0 * cfg.inner_tol);
            prev = rec.energy.total;
        }
    }

    #[test]
    fn helium_small_step_needs_few_inner_iterations() {
        let sys = helium(true);
        let w = make_initial_waves(&sys, &InitialRule::Exponential).unwrap();
        let mut state = FlowState::new(&sys, w).unwrap();
        let rep = step_component(&sys, &mut state, 0, 1e-4, &FlowConfig::default()).unwrap();
        assert!(rep.inner_iterations <= 10, "{}", rep.inner_iterations);
    }

    #[test]
    fn two_orbitals_stay_orthonormal() {
        let sys = system(
            4.0,
            0.8,
            vec![
                Nucleus {
                    charge: 1.0,
                    position: [-1.0, 0.0, 0.0],
                },
                Nucleus {
                    charge: 3.0,
                    position: [1.0, 0.0, 0.0],
                },
            ],
            true,
        );
        let w = make_initial_waves(&sys, &InitialRule::UnitVectors(2)).unwrap();
        assert!(w.orthonormality_error() <= 1e-12);
        let cfg = FlowConfig {
            dt: DtSchedule::Fixed(1e-1),
            max_steps: 5,
            ..FlowConfig::default()
        };
        let state = run(&sys, w, &cfg).unwrap();
        let mut prev = state.initial_energy.total;
        for rec in &state.history {
            assert!(rec.orthonormality_error <= 100.0 * cfg.inner_tol, "{}", rec.orthonormality_error);
            assert!(rec.energy.total <= prev + 1e-10 * (1.0 + prev.abs()));
            for c in &rec.components {
                assert!(c.cross_overlap <= 10.0 * cfg.inner_tol);
            }
            prev = rec.energy.total;
        }
    }

    #[test]
    fn invariant_subspace_is_stationary() {
        let sys = helium(false);
        let v = lowest_eigvecs(&sys, 2);
        // A rotation of the two lowest eigenvectors spans an invariant subspace.
        let (c, s) = (0.6f64, 0.8f64);
        let a: Vec<f64> = v[0].iter().zip(&v[1]).map(|(x, y)| c * x + s * y).collect();
        let b: Vec<f64> = v[0].iter().zip(&v[1]).map(|(x, y)| -s * x + c * y).collect();
        let waves = WaveFunctionSet::new(vec![a.clone(), b.clone()], sys.mass().clone()).unwrap();
        let mut state = FlowState::new(&sys, waves).unwrap();
        let e0 = state.energy.total;
        sweep(&sys, &mut state, 0.5, &FlowConfig::default()).unwrap();
        assert!((state.energy.total - e0).abs() <= 1e-10 * e0.abs());
        for (new, old) in state.waves.waves().iter().zip([&a, &b]) {
            let d: Vec<f64> = new.iter().zip(old).map(|(x, y)| x - y).collect();
            assert!(sys.mass().quad_form(&d).sqrt() <= 1e-8);
        }
    }

    #[test]
    fn converged_input_stops_after_one_sweep() {
        let sys = helium(false);
        let v = lowest_eigvecs(&sys, 1);
        let waves = WaveFunctionSet::new(v, sys.mass().clone()).unwrap();
        let state = run(&sys, waves, &FlowConfig::default()).unwrap();
        assert!(state.converged);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn initial_waves_follow_rules() {
        let sys = helium(false);
        let he = make_initial_waves(&sys, &InitialRule::Exponential).unwrap();
        assert_eq!(he.len(), 1);
        assert!(he.orthonormality_error() <= 1e-12);
        assert!(he.wave(0).iter().all(|&x| x > 0.0));
        let peak = he
            .wave(0)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(sys.mesh().nodes()[sys.mesh().node_of_dof(peak)], [0.0; 3]);

        let unit = make_initial_waves(&sys, &InitialRule::UnitVectors(3)).unwrap();
        assert!(unit.orthonormality_error() <= 1e-12);
        let support: Vec<usize> = unit
            .waves()
            .iter()
            .map(|w| w.iter().position(|&x| x != 0.0).unwrap())
            .collect();
        for t in sys.mesh().tets() {
            let hits = support
                .iter()
                .filter(|&&d| t.contains(&sys.mesh().node_of_dof(d)))
                .count();
            assert!(hits <= 1);
        }

        let mixed = make_initial_waves(&sys, &InitialRule::ExponentialThenUnit(3)).unwrap();
        assert_eq!(mixed.len(), 3);
        assert!(mixed.orthonormality_error() <= 1e-12);

        let r1 = make_initial_waves(&sys, &InitialRule::Random { n: 2, seed: 1 }).unwrap();
        let r2 = make_initial_waves(&sys, &InitialRule::Random { n: 2, seed: 1 }).unwrap();
        assert_eq!(r1.waves(), r2.waves());
    }
}
