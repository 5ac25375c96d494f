//! Brute-force references for the linear problem and the Coulomb energy.
//!
//! Everything here is rebuilt from the raw assembled matrices and dense
//! factorizations. Nothing goes through the Hamiltonian builder or the
//! Hartree solver used by the flow, so agreement is a real cross-check.

use std::fmt;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_mass, assemble_potential_matrix, assemble_stiffness, NuclearConfig};
use crate::error::{Error, Result};
use crate::flow::{make_initial_waves, m_orthonormalize, run, FlowConfig, InitialRule};
use crate::hamiltonian::{KohnShamSystem, WaveFunctionSet};
use crate::linalg::{dense_generalized_eig, GeneralizedEigen, DENSE_LIMIT};
use crate::mesh::{Mesh, Point};

/// Gap below which the lowest-N eigenspace is treated as ill defined.
pub const DEGENERACY_GAP: f64 = 1e-8;

/// Largest point cloud accepted by [`hartree_brute_force`].
pub const BRUTE_FORCE_LIMIT: usize = 20 * 20 * 20;

/// Dense `H_L = ½K + M_ext` and `M` on the interior dofs.
#[derive(Debug, Clone)]
pub struct DenseLinearProblem {
    pub hamiltonian: DMatrix<f64>,
    pub mass: DMatrix<f64>,
}

impl DenseLinearProblem {
    pub fn assemble(mesh: &Arc<Mesh>, nuclei: &NuclearConfig) -> Result<Self> {
        let dim = mesh.interior_dof_count();
        if dim > DENSE_LIMIT {
            return Err(Error::TooLarge {
                dimension: dim,
                limit: DENSE_LIMIT,
            });
        }
        let k = assemble_stiffness(mesh)?.to_dense();
        let v = assemble_potential_matrix(mesh, nuclei)?.to_dense();
        let m = assemble_mass(mesh)?.to_dense();
        Ok(Self {
            hamiltonian: k * 0.5 + v,
            mass: m,
        })
    }

    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    pub fn spectrum(&self) -> Result<GeneralizedEigen> {
        dense_generalized_eig(&self.hamiltonian, &self.mass)
    }

    /// `Σ_l ψ_lᵀ H_L ψ_l`.
    pub fn linear_energy(&self, waves: &[Vec<f64>]) -> f64 {
        waves
            .iter()
            .map(|w| {
                let v = DVector::from_column_slice(w);
                v.dot(&(&self.hamiltonian * &v))
            })
            .sum()
    }
}

/// Sum of the `n` lowest generalized eigenvalues of `(½K + M_ext, M)`.
pub fn linear_ground_energy(mesh: &Arc<Mesh>, nuclei: &NuclearConfig, n: usize) -> Result<f64> {
    let problem = DenseLinearProblem::assemble(mesh, nuclei)?;
    if n > problem.dim() {
        return Err(Error::Config(format!(
            "orbital count {n} exceeds the {} available dofs",
            problem.dim()
        )));
    }
    Ok(problem.spectrum()?.values[..n].iter().sum())
}

/// `tr(M⁻¹A)` by a column-wise LU solve, independent of the eigensolver.
pub fn trace_of_generalized(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64> {
    let x = m
        .clone()
        .lu()
        .solve(a)
        .ok_or_else(|| Error::NotPositiveDefinite("mass matrix is singular".into()))?;
    Ok(x.trace())
}

/// Lowest eigenvalue of `-½Δ` on a cube of side `side` with zero boundary.
pub fn particle_in_a_box(side: f64) -> f64 {
    1.5 * (std::f64::consts::PI / side).powi(2)
}

/// Largest principal angle between the spans of two M-orthonormal sets.
///
/// Computed from the part of `B` outside `span(A)`,
/// `sin θ_max = ‖B - A AᵀMB‖_M`, which stays accurate for small angles.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>, mass: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 || b.ncols() == 0 {
        return 0.0;
    }
    let residual = b - a * (a.transpose() * mass * b);
    let gram = residual.transpose() * mass * &residual;
    let gram = (&gram + gram.transpose()) * 0.5;
    let largest = gram.symmetric_eigenvalues().iter().copied().fold(0.0, f64::max);
    largest.sqrt().min(1.0).asin()
}

/// Starting point of a linear validation run.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearStart {
    /// M-orthonormalized random vectors.
    Random(u64),
    /// One of the usual initial-orbital rules.
    Rule(InitialRule),
    /// The lowest-N eigenvectors of the dense problem.
    Eigenbasis,
}

/// Outcome of [`validate_linear_flow`]; failures are reported, not raised.
#[derive(Debug, Clone)]
pub struct LinearValidationReport {
    pub dofs: usize,
    pub orbitals: usize,
    pub flow_energy: f64,
    pub oracle_energy: f64,
    pub energy_error: f64,
    pub energy_tolerance: f64,
    /// `λ_{N+1} - λ_N`, `None` when `N` equals the dimension.
    pub gap: Option<f64>,
    /// `None` when the span test was skipped for a near-degenerate spectrum.
    pub max_angle: Option<f64>,
    pub angle_tolerance: f64,
    /// Largest Gram deviation `max |ψ_iᵀ M ψ_j - δ_ij|` seen along the run.
    pub max_orthonormality_error: f64,
    pub steps: usize,
    pub converged: bool,
    pub failure: Option<String>,
}

impl LinearValidationReport {
    pub fn energy_ok(&self) -> bool {
        self.failure.is_none() && self.energy_error <= self.energy_tolerance
    }

    pub fn span_ok(&self) -> bool {
        self.failure.is_none() && self.max_angle.is_none_or(|a| a <= self.angle_tolerance)
    }

    pub fn passed(&self) -> bool {
        self.energy_ok() && self.span_ok()
    }
}

impl fmt::Display for LinearValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dofs: {}", self.dofs)?;
        writeln!(f, "orbitals: {}", self.orbitals)?;
        writeln!(f, "flow_energy: {:.16e}", self.flow_energy)?;
        writeln!(f, "oracle_energy: {:.16e}", self.oracle_energy)?;
        writeln!(f, "energy_error: {:.3e} (tolerance {:.3e})", self.energy_error, self.energy_tolerance)?;
        match self.gap {
            Some(g) => writeln!(f, "gap: {g:.6e}")?,
            None => writeln!(f, "gap: none")?,
        }
        match self.max_angle {
            Some(a) => writeln!(f, "max_principal_angle: {a:.3e} (tolerance {:.1e})", self.angle_tolerance)?,
            None if self.failure.is_some() => writeln!(f, "max_principal_angle: not computed")?,
            None => writeln!(f, "max_principal_angle: skipped (degenerate)")?,
        }
        writeln!(f, "max_orthonormality_error: {:.3e}", self.max_orthonormality_error)?;
        writeln!(f, "steps: {}", self.steps)?;
        writeln!(f, "converged: {}", self.converged)?;
        if let Some(msg) = &self.failure {
            writeln!(f, "failure: {msg}")?;
        }
        write!(f, "result: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn columns(m: &DMatrix<f64>, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|j| m.column(j).iter().copied().collect()).collect()
}

fn as_matrix(waves: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, waves.len(), |i, j| waves[j][i])
}

/// Runs the flow with the Hartree term off and compares its limit with the
/// dense eigensolution: energy to `1e-6 (1 + |E|)` and span to `1e-4` rad.
/// The report also carries the largest orthonormality defect of the run.
pub fn validate_linear_flow(
    mesh: &Arc<Mesh>,
    nuclei: &NuclearConfig,
    n: usize,
    config: &FlowConfig,
    start: LinearStart,
) -> Result<LinearValidationReport> {
    let problem = DenseLinearProblem::assemble(mesh, nuclei)?;
    let dim = problem.dim();
    if n == 0 || n > dim {
        return Err(Error::Config(format!("orbital count {n} must be in 1..={dim}")));
    }
    let spectrum = problem.spectrum()?;
    let oracle_energy: f64 = spectrum.values[..n].iter().sum();
    let gap = (n < dim).then(|| spectrum.values[n] - spectrum.values[n - 1]);

    let mut report = LinearValidationReport {
        dofs: dim,
        orbitals: n,
        flow_energy: f64::NAN,
        oracle_energy,
        energy_error: f64::INFINITY,
        energy_tolerance: 1e-6 * (1.0 + oracle_energy.abs()),
        gap,
        max_angle: None,
        angle_tolerance: 1e-4,
        max_orthonormality_error: f64::NAN,
        steps: 0,
        converged: false,
        failure: None,
    };

    let system = KohnShamSystem::new(mesh.clone(), nuclei.clone(), None)?;
    let initial = match start {
        LinearStart::Random(seed) => make_initial_waves(&system, &InitialRule::Random { n, seed })?,
        LinearStart::Rule(rule) => {
            if rule.orbital_count() != n {
                return Err(Error::Config(format!(
                    "initial rule makes {} orbitals, expected {n}",
                    rule.orbital_count()
                )));
            }
            make_initial_waves(&system, &rule)?
        }
        LinearStart::Eigenbasis => {
            let mut waves = columns(&spectrum.vectors, n);
            m_orthonormalize(system.mass(), &mut waves)?;
            WaveFunctionSet::new(waves, system.mass().clone())?
        }
    };
    let state = match run(&system, initial, config) {
        Ok(s) => s,
        Err(e) => {
            report.failure = Some(format!("flow failed: {e}"));
            return Ok(report);
        }
    };
    report.steps = state.step;
    report.converged = state.converged;
    report.max_orthonormality_error = state
        .history
        .iter()
        .map(|r| r.orthonormality_error)
        .fold(state.initial_orthonormality_error, f64::max);
    let waves = state.waves.waves();
    report.flow_energy = problem.linear_energy(waves);
    report.energy_error = (report.flow_energy - oracle_energy).abs();

    let degenerate = gap.is_some_and(|g| g < DEGENERACY_GAP);
    if degenerate {
        warn!("spectral gap {:.3e} below {DEGENERACY_GAP:.0e}; span test skipped", gap.unwrap_or(0.0));
    } else {
        let eig = spectrum.vectors.columns(0, n).into_owned();
        report.max_angle = Some(max_principal_angle(&eig, &as_matrix(waves, dim), &problem.mass));
    }
    if !report.converged {
        report.failure = Some(format!("flow did not converge in {} steps", report.steps));
    }
    Ok(report)
}

/// Worst `Σ⟨H_L ψ_l, ψ_l⟩ - E_min` over `sets` random M-orthonormal sets of
/// size `n`; nonnegative up to roundoff by Courant-Fischer.
pub fn variational_margin(problem: &DenseLinearProblem, n: usize, sets: usize, seed: u64) -> Result<f64> {
    let dim = problem.dim();
    let ground: f64 = problem.spectrum()?.values[..n].iter().sum();
    let mass = crate::sparse::SparseSymMatrix::from_entries(
        dim,
        &(0..dim)
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .filter(|&(i, j)| problem.mass[(i, j)] != 0.0)
            .map(|(i, j)| (i, j, problem.mass[(i, j)]))
            .collect::<Vec<_>>(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..sets {
        let mut waves: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        m_orthonormalize(&mass, &mut waves)?;
        worst = worst.min(problem.linear_energy(&waves) - ground);
    }
    Ok(worst)
}

/// `Σ_{i≠j} w_i w_j ρ_i ρ_j / |r_i - r_j|`, the Coulomb double integral with
/// the self-interaction of each sample dropped.
pub fn hartree_brute_force(points: &[Point], weights: &[f64], rho: &[f64]) -> Result<f64> {
    let n = points.len();
    if weights.len() != n || rho.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: weights.len().min(rho.len()),
        });
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            dimension: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let charge: Vec<f64> = weights.iter().zip(rho).map(|(w, r)| w * r).collect();
    let mut total = 0.0;
    for i in 0..n {
        if charge[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in (i + 1)..n {
            let d = ((points[i][0] - points[j][0]).powi(2)
                + (points[i][1] - points[j][1]).powi(2)
                + (points[i][2] - points[j][2]).powi(2))
            .sqrt();
            if d > 0.0 {
                row += charge[j] / d;
            }
        }
        total += 2.0 * charge[i] * row;
    }
    Ok(total)
}

/// Cell centers and volumes of a uniform `cells³` grid over `[lo, hi]³`.
pub fn midpoint_grid(lo: f64, hi: f64, cells: usize) -> (Vec<Point>, Vec<f64>) {
    let h = (hi - lo) / cells as f64;
    let c = |i: usize| lo + (i as f64 + 0.5) * h;
    let mut points = Vec::with_capacity(cells.pow(3));
    for i in 0..cells {
        for j in 0..cells {
            for k in 0..cells {
                points.push([c(i), c(j), c(k)]);
            }
        }
    }
    let weights = vec![h * h * h; points.len()];
    (points, weights)
}
