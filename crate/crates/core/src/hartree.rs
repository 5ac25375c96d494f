//! Electron density, Hartree potential and the Coulomb bilinear form.
//!
//! The density of a set of P1 orbitals is kept at the quadrature points,
//! `ρ_q = Σ_l ψ_l(x_q)²`, which the 4-point rule integrates exactly against
//! constants. The Hartree potential solves `-ΔV = 4πρ` with P1 elements on
//! all mesh nodes, and every pairing between a potential and a density goes
//! through the same quadrature. With this choice the Hartree term of the
//! Hamiltonian is exactly the derivative of the Hartree energy, which is
//! what the energy-stability argument of the flow relies on.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{DofSet, FeSpace, QUAD_POINTS};
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, SolveReport};
use crate::mesh::Point;
use crate::sparse::{SparseSymMatrix, SparsityPattern};

/// Relative residual used for every Poisson solve.
pub const POISSON_TOL: f64 = 1e-12;

/// Closure of the Poisson problem on the truncated box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HartreeBoundary {
    /// `V = 0` on the box surface.
    ZeroDirichlet,
    /// `V = Q / |r - r_c|` on the surface, with `r_c` the charge centroid
    /// of the density. Affine in ρ through `Q` and nonlinear through `r_c`,
    /// so the induced pairing is not symmetric.
    MonopoleDirichlet,
    /// `∂V/∂n + β V = 0` with `β = (r - c)·n / |r - c|²`, which every
    /// monopole field centered at `c` satisfies exactly. Linear and
    /// symmetric positive definite.
    #[default]
    MonopoleRobin,
}

impl HartreeBoundary {
    pub fn name(self) -> &'static str {
        match self {
            Self::ZeroDirichlet => "zero",
            Self::MonopoleDirichlet => "monopole-dirichlet",
            Self::MonopoleRobin => "monopole-robin",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" | "zero-dirichlet" => Some(Self::ZeroDirichlet),
            "monopole-dirichlet" => Some(Self::MonopoleDirichlet),
            "monopole-robin" | "robin" => Some(Self::MonopoleRobin),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DensityField {
    /// Nodal values on all mesh nodes (nodal squaring for orbital densities);
    /// used for output and interpolation only.
    nodal: Vec<f64>,
    /// Values at the quadrature points; the source of every integral.
    quad: Vec<f64>,
    total_charge: f64,
}

impl DensityField {
    pub fn zeros(fe: &FeSpace) -> Self {
        Self {
            nodal: vec![0.0; fe.dim(DofSet::All)],
            quad: vec![0.0; fe.quad_len()],
            total_charge: 0.0,
        }
    }

    /// P1 density with the given values at all mesh nodes.
    pub fn from_nodal(fe: &FeSpace, nodal: Vec<f64>) -> Result<Self> {
        if nodal.len() != fe.dim(DofSet::All) {
            return Err(Error::DimensionMismatch {
                expected: fe.dim(DofSet::All),
                actual: nodal.len(),
            });
        }
        let mut quad = vec![0.0; fe.quad_len()];
        fe.interpolate_to_quad(DofSet::All, &nodal, &mut quad);
        Ok(Self::from_parts(fe, nodal, quad))
    }

    pub(crate) fn from_parts(fe: &FeSpace, nodal: Vec<f64>, quad: Vec<f64>) -> Self {
        let total_charge = integrate(fe, &quad);
        Self {
            nodal,
            quad,
            total_charge,
        }
    }

    pub fn nodal(&self) -> &[f64] {
        &self.nodal
    }

    pub fn quad_values(&self) -> &[f64] {
        &self.quad
    }

    /// `∫ ρ`.
    pub fn total_charge(&self) -> f64 {
        self.total_charge
    }

    /// `∫` of the P1 interpolant of the nodal values, `1ᵀ M_full ρ_nodal`.
    /// Differs from [`Self::total_charge`] by the nodal-squaring error.
    pub fn nodal_charge(&self, fe: &FeSpace) -> f64 {
        let mut q = vec![0.0; fe.quad_len()];
        fe.interpolate_to_quad(DofSet::All, &self.nodal, &mut q);
        integrate(fe, &q)
    }

    /// `ρ_a + ρ_b`.
    pub fn sum(&self, other: &Self) -> Self {
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Self {
            nodal: add(&self.nodal, &other.nodal),
            quad: add(&self.quad, &other.quad),
            total_charge: self.total_charge + other.total_charge,
        }
    }

    /// `c_a ρ_a + c_b ρ_b`, not necessarily a physical density.
    pub fn combine(ca: f64, a: &Self, cb: f64, b: &Self) -> Self {
        let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| ca * p + cb * q).collect();
        Self {
            nodal: mix(&a.nodal, &b.nodal),
            quad: mix(&a.quad, &b.quad),
            total_charge: ca * a.total_charge + cb * b.total_charge,
        }
    }
}

fn integrate(fe: &FeSpace, quad: &[f64]) -> f64 {
    fe.volumes()
        .iter()
        .zip(quad.chunks_exact(QUAD_POINTS))
        .map(|(v, q)| 0.25 * v * q.iter().sum::<f64>())
        .sum()
}

/// Density `Σ_l ψ_l²` of orbitals given by their interior coefficients.
pub fn compute_density(fe: &FeSpace, orbitals: &[&[f64]]) -> DensityField {
    let mut quad = vec![0.0; fe.quad_len()];
    let mut buf = vec![0.0; fe.quad_len()];
    let mut nodal = vec![0.0; fe.dim(DofSet::All)];
    for psi in orbitals {
        fe.interpolate_to_quad(DofSet::Interior, psi, &mut buf);
        for (r, v) in quad.iter_mut().zip(&buf) {
            *r += v * v;
        }
        for (d, &c) in psi.iter().enumerate() {
            nodal[fe.mesh().node_of_dof(d)] += c * c;
        }
    }
    DensityField::from_parts(fe, nodal, quad)
}

#[derive(Debug, Clone)]
pub struct HartreePotential {
    /// Nodal values on all mesh nodes.
    values: Vec<f64>,
    source_charge: f64,
    report: SolveReport,
}

impl HartreePotential {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_charge(&self) -> f64 {
        self.source_charge
    }

    pub fn report(&self) -> &SolveReport {
        &self.report
    }
}

/// Poisson solver for `-ΔV = 4πρ` on a fixed P1 space.
#[derive(Debug)]
pub struct HartreeSolver {
    fe: Arc<FeSpace>,
    boundary: HartreeBoundary,
    center: Point,
    /// Interior stiffness for the Dirichlet closures; all-node stiffness plus
    /// the Robin surface term otherwise.
    operator: SparseSymMatrix,
    /// All-node stiffness, used to lift Dirichlet data.
    stiffness_all: SparseSymMatrix,
    quad_points: Vec<Point>,
}

impl HartreeSolver {
    /// `center` anchors the monopole closure for [`HartreeBoundary::MonopoleRobin`].
    pub fn new(fe: Arc<FeSpace>, boundary: HartreeBoundary, center: Point) -> Result<Self> {
        let stiffness_all = fe.stiffness(DofSet::All);
        let operator = match boundary {
            HartreeBoundary::ZeroDirichlet | HartreeBoundary::MonopoleDirichlet => {
                fe.stiffness(DofSet::Interior)
            }
            HartreeBoundary::MonopoleRobin => {
                let robin = robin_matrix(&fe, &center)?;
                SparseSymMatrix::linear_combination(&[(1.0, &stiffness_all), (1.0, &robin)])?
            }
        };
        let quad_points = fe.quad_points();
        Ok(Self {
            fe,
            boundary,
            center,
            operator,
            stiffness_all,
            quad_points,
        })
    }

    pub fn fe(&self) -> &Arc<FeSpace> {
        &self.fe
    }

    pub fn boundary(&self) -> HartreeBoundary {
        self.boundary
    }

    pub fn center(&self) -> Point {
        self.center
    }

    /// Charge centroid of ρ; the box center when ρ carries no charge.
    pub fn charge_centroid(&self, density: &DensityField) -> Point {
        let q = density.total_charge;
        if q == 0.0 {
            return self.fe.mesh().domain().center();
        }
        let mut c = [0.0; 3];
        for (e, v) in self.fe.volumes().iter().enumerate() {
            for k in 0..QUAD_POINTS {
                let i = QUAD_POINTS * e + k;
                let w = 0.25 * v * density.quad[i];
                for (ca, pa) in c.iter_mut().zip(&self.quad_points[i]) {
                    *ca += w * pa;
                }
            }
        }
        c.map(|x| x / q)
    }

    pub fn solve(&self, density: &DensityField) -> Result<HartreePotential> {
        self.solve_from(density, None)
    }

    /// Solve warm-started from a previous potential on the same mesh.
    pub fn solve_from(
        &self,
        density: &DensityField,
        guess: Option<&HartreePotential>,
    ) -> Result<HartreePotential> {
        if density.quad.len() != self.fe.quad_len() {
            return Err(Error::DimensionMismatch {
                expected: self.fe.quad_len(),
                actual: density.quad.len(),
            });
        }
        let mesh = self.fe.mesh();
        let load = self.fe.load_vector(DofSet::All, &density.quad);
        match self.boundary {
            HartreeBoundary::MonopoleRobin => {
                let rhs: Vec<f64> = load.iter().map(|f| 4.0 * PI * f).collect();
                let (values, report) =
                    solve_spd(&self.operator, &rhs, guess.map(|g| g.values.as_slice()), POISSON_TOL)?;
                Ok(HartreePotential {
                    values,
                    source_charge: density.total_charge,
                    report,
                })
            }
            HartreeBoundary::ZeroDirichlet | HartreeBoundary::MonopoleDirichlet => {
                let mut nodal = vec![0.0; mesh.node_count()];
                if self.boundary == HartreeBoundary::MonopoleDirichlet && density.total_charge != 0.0 {
                    let rc = self.charge_centroid(density);
                    for n in mesh.boundary_nodes() {
                        let p = mesh.nodes()[n];
                        let d = (0..3).map(|a| (p[a] - rc[a]).powi(2)).sum::<f64>().sqrt();
                        nodal[n] = density.total_charge / d;
                    }
                }
                let lift = self.stiffness_all.mul_vec(&nodal);
                let rhs: Vec<f64> = (0..mesh.interior_dof_count())
                    .map(|d| {
                        let n = mesh.node_of_dof(d);
                        4.0 * PI * load[n] - lift[n]
                    })
                    .collect();
                let guess = guess.map(|g| self.fe.restrict_to_interior(&g.values));
                let (inner, report) =
                    solve_spd(&self.operator, &rhs, guess.as_deref(), POISSON_TOL)?;
                for (d, v) in inner.into_iter().enumerate() {
                    nodal[mesh.node_of_dof(d)] = v;
                }
                Ok(HartreePotential {
                    values: nodal,
                    source_charge: density.total_charge,
                    report,
                })
            }
        }
    }

    /// `⟨V, ρ⟩ = ∫ V ρ` through the quadrature rule.
    pub fn pairing(&self, potential: &HartreePotential, density: &DensityField) -> f64 {
        let mut vq = vec![0.0; self.fe.quad_len()];
        self.fe.interpolate_to_quad(DofSet::All, &potential.values, &mut vq);
        let mut total = 0.0;
        for (e, v) in self.fe.volumes().iter().enumerate() {
            let mut acc = 0.0;
            for k in 0..QUAD_POINTS {
                let i = QUAD_POINTS * e + k;
                acc += vq[i] * density.quad[i];
            }
            total += 0.25 * v * acc;
        }
        total
    }

    /// `⟨L_Har ρ_a, ρ_b⟩ = ⟨V(ρ_a), ρ_b⟩`.
    pub fn bilinear(&self, a: &DensityField, b: &DensityField) -> Result<f64> {
        Ok(self.pairing(&self.solve(a)?, b))
    }

    /// Potential values at the quadrature points.
    pub fn potential_at_quad(&self, potential: &HartreePotential) -> Vec<f64> {
        let mut vq = vec![0.0; self.fe.quad_len()];
        self.fe.interpolate_to_quad(DofSet::All, &potential.values, &mut vq);
        vq
    }
}

pub fn solve_hartree(solver: &HartreeSolver, density: &DensityField) -> Result<HartreePotential> {
    solver.solve(density)
}

pub fn hartree_bilinear(
    solver: &HartreeSolver,
    rho_a: &DensityField,
    rho_b: &DensityField,
) -> Result<f64> {
    solver.bilinear(rho_a, rho_b)
}

/// Surface term `∫_∂Ω β φ_i φ_j dS` with `β = (r - c)·n / |r - c|²`.
fn robin_matrix(fe: &FeSpace, center: &Point) -> Result<SparseSymMatrix> {
    let mesh = fe.mesh();
    let pattern: Arc<SparsityPattern> = fe.pattern(DofSet::All).clone();
    let mut m = SparseSymMatrix::zeros(pattern.clone());
    let lo = mesh.domain().lo();
    let hi = mesh.domain().hi();
    // Degree-2 triangle rule.
    const TRI: [[f64; 3]; 3] = [
        [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
    ];
    for tet in mesh.tets() {
        for skip in 0..4 {
            let f: Vec<usize> = (0..4).filter(|&a| a != skip).map(|a| tet[a]).collect();
            let facet = [f[0], f[1], f[2]];
            if !mesh.facet_on_surface(&facet) {
                continue;
            }
            let p = facet.map(|n| mesh.nodes()[n]);
            let mut normal = [0.0; 3];
            for a in 0..3 {
                if p.iter().all(|x| x[a] == lo[a]) {
                    normal[a] = -1.0;
                } else if p.iter().all(|x| x[a] == hi[a]) {
                    normal[a] = 1.0;
                }
            }
            let u = [0, 1, 2].map(|a| p[1][a] - p[0][a]);
            let v = [0, 1, 2].map(|a| p[2][a] - p[0][a]);
            let cx = [
                u[1] * v[2] - u[2] * v[1],
                u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0],
            ];
            let area = 0.5 * (cx[0] * cx[0] + cx[1] * cx[1] + cx[2] * cx[2]).sqrt();
            let mut block = [[0.0; 3]; 3];
            for bary in TRI {
                let x = [0, 1, 2].map(|a| (0..3).map(|k| bary[k] * p[k][a]).sum::<f64>());
                let d = [0, 1, 2].map(|a| x[a] - center[a]);
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                if r2 == 0.0 {
                    return Err(Error::InvalidMesh(
                        "Robin center lies on the box surface".into(),
                    ));
                }
                let beta = (d[0] * normal[0] + d[1] * normal[1] + d[2] * normal[2]) / r2;
                for a in 0..3 {
                    for b in 0..3 {
                        block[a][b] += area / 3.0 * beta * bary[a] * bary[b];
                    }
                }
            }
            let values = m.values_mut();
            for a in 0..3 {
                for b in 0..3 {
                    let pos = pattern.position(facet[a], facet[b]).unwrap();
                    values[pos] += 0.5 * (block[a][b] + block[b][a]);
                }
            }
        }
    }
    Ok(m)
}

/// Outcome of the Coulomb-form property battery.
#[derive(Debug, Clone)]
pub struct HartreeInequalityReport {
    pub pairs: usize,
    /// Largest `⟨Lρ2, ρ1-ρ2⟩ - ⟨Lρ1, ρ1-ρ2⟩` relative to the pair scale.
    pub worst_monotonicity: f64,
    /// Largest `⟨Lρ2,ρ2⟩ - ⟨Lρ1,ρ1⟩ - 2⟨Lρ2, ρ2-ρ1⟩` relative to the scale.
    pub worst_energy_bound: f64,
    /// Smallest `⟨L(ρ1-ρ2), ρ1-ρ2⟩` relative to the scale.
    pub worst_definiteness: f64,
    /// Largest `|⟨Lρ1,ρ2⟩ - ⟨Lρ2,ρ1⟩|` relative to the scale.
    pub worst_asymmetry: f64,
}

impl HartreeInequalityReport {
    pub fn passes(&self, slack: f64, definiteness_slack: f64) -> bool {
        self.worst_monotonicity <= slack
            && self.worst_energy_bound <= slack
            && self.worst_definiteness >= -definiteness_slack
    }
}

/// Random non-negative P1 densities, each a few smooth bumps plus noise.
pub fn random_density(fe: &FeSpace, rng: &mut impl Rng) -> DensityField {
    let mesh = fe.mesh();
    let lo = mesh.domain().lo();
    let hi = mesh.domain().hi();
    let bumps: Vec<(Point, f64, f64)> = (0..3)
        .map(|_| {
            let c = [0, 1, 2].map(|a| lo[a] + (0.25 + 0.5 * rng.random::<f64>()) * (hi[a] - lo[a]));
            let w = 0.1 * (hi[0] - lo[0]) * (0.5 + rng.random::<f64>());
            (c, w, rng.random::<f64>())
        })
        .collect();
    let nodal: Vec<f64> = mesh
        .nodes()
        .iter()
        .enumerate()
        .map(|(n, p)| {
            if mesh.is_boundary(n) {
                return 0.0;
            }
            let smooth: f64 = bumps
                .iter()
                .map(|(c, w, a)| {
                    let r2: f64 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum();
                    a * (-r2 / (w * w)).exp()
                })
                .sum();
            smooth + 0.05 * rng.random::<f64>()
        })
        .collect();
    DensityField::from_nodal(fe, nodal).expect("nodal length matches the mesh")
}

/// Checks both Coulomb-form inequalities, positive semidefiniteness and
/// symmetry on `pairs` random density pairs.
pub fn check_hartree_inequalities(
    solver: &HartreeSolver,
    pairs: usize,
    seed: u64,
) -> Result<HartreeInequalityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = HartreeInequalityReport {
        pairs,
        worst_monotonicity: f64::NEG_INFINITY,
        worst_energy_bound: f64::NEG_INFINITY,
        worst_definiteness: f64::INFINITY,
        worst_asymmetry: 0.0,
    };
    for _ in 0..pairs {
        let r1 = random_density(solver.fe(), &mut rng);
        let r2 = random_density(solver.fe(), &mut rng);
        let v1 = solver.solve(&r1)?;
        let v2 = solver.solve(&r2)?;
        let l11 = solver.pairing(&v1, &r1);
        let l12 = solver.pairing(&v1, &r2);
        let l21 = solver.pairing(&v2, &r1);
        let l22 = solver.pairing(&v2, &r2);
        let scale = l11.abs() + l22.abs();
        let diff = DensityField::combine(1.0, &r1, -1.0, &r2);
        let ldd = solver.bilinear(&diff, &diff)?;
        // ⟨Lρ2, ρ1 - ρ2⟩ ≤ ⟨Lρ1, ρ1 - ρ2⟩
        let mono = (l21 - l22) - (l11 - l12);
        // ⟨Lρ2,ρ2⟩ - ⟨Lρ1,ρ1⟩ ≤ 2⟨Lρ2, ρ2 - ρ1⟩
        let bound = (l22 - l11) - 2.0 * (l22 - l21);
        report.worst_monotonicity = report.worst_monotonicity.max(mono / scale);
        report.worst_energy_bound = report.worst_energy_bound.max(bound / scale);
        report.worst_definiteness = report.worst_definiteness.min(ldd / scale);
        report.worst_asymmetry = report.worst_asymmetry.max((l12 - l21).abs() / scale);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_graded_box_mesh, BoxDomain, GradingFunction};

    fn space(half: f64, h: f64) -> Arc<FeSpace> {
        let mesh = build_graded_box_mesh(
            &BoxDomain::cube(half).unwrap(),
            &GradingFunction::Uniform { h },
            1_000_000,
        )
        .unwrap();
        Arc::new(FeSpace::new(Arc::new(mesh)).unwrap())
    }

    #[test]
    fn zero_density_gives_zero_potential() {
        let fe = space(2.0, 0.5);
        for b in [
            HartreeBoundary::ZeroDirichlet,
            HartreeBoundary::MonopoleDirichlet,
            HartreeBoundary::MonopoleRobin,
        ] {
            let solver = HartreeSolver::new(fe.clone(), b, [0.0; 3]).unwrap();
            let v = solver.solve(&DensityField::zeros(&fe)).unwrap();
            assert!(v.values().iter().all(|&x| x == 0.0), "{b:?}");
        }
    }

    #[test]
    fn zero_orbitals_give_zero_density() {
        let fe = space(1.0, 0.5);
        let psi = vec![0.0; fe.dim(DofSet::Interior)];
        let rho = compute_density(&fe, &[&psi]);
        assert_eq!(rho.total_charge(), 0.0);
        assert!(rho.nodal().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn orbital_charge_equals_mass_norm() {
        let fe = space(2.0, 0.4);
        let m = fe.mass(DofSet::Interior);
        let n = fe.dim(DofSet::Interior);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let rho = compute_density(&fe, &[&psi]);
        let expect = m.quad_form(&psi);
        assert!((rho.total_charge() - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn monopole_dirichlet_boundary_matches_closure() {
        let fe = space(2.0, 0.5);
        let solver = HartreeSolver::new(fe.clone(), HartreeBoundary::MonopoleDirichlet, [0.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho = random_density(&fe, &mut rng);
        let v = solver.solve(&rho).unwrap();
        let rc = solver.charge_centroid(&rho);
        let mesh = fe.mesh();
        for n in mesh.boundary_nodes() {
            let p = mesh.nodes()[n];
            let d = (0..3).map(|a| (p[a] - rc[a]).powi(2)).sum::<f64>().sqrt();
            assert!((v.values()[n] - rho.total_charge() / d).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_is_linear_in_density() {
        let fe = space(2.0, 0.5);
        let solver = HartreeSolver::new(fe.clone(), HartreeBoundary::MonopoleRobin, [0.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_density(&fe, &mut rng);
        let b = random_density(&fe, &mut rng);
        let va = solver.solve(&a).unwrap();
        let vb = solver.solve(&b).unwrap();
        let vab = solver.solve(&a.sum(&b)).unwrap();
        let scale = vab.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..vab.values().len() {
            let d = vab.values()[i] - va.values()[i] - vb.values()[i];
            assert!(d.abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn bilinear_form_is_symmetric_and_positive() {
        let fe = space(2.0, 0.5);
        for b in [HartreeBoundary::ZeroDirichlet, HartreeBoundary::MonopoleRobin] {
            let solver = HartreeSolver::new(fe.clone(), b, [0.0; 3]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let r1 = random_density(&fe, &mut rng);
            let r2 = random_density(&fe, &mut rng);
            let l11 = solver.bilinear(&r1, &r1).unwrap();
            let l22 = solver.bilinear(&r2, &r2).unwrap();
            let l12 = solver.bilinear(&r1, &r2).unwrap();
            let l21 = solver.bilinear(&r2, &r1).unwrap();
            assert!(l11 > 0.0 && l22 > 0.0);
            assert!((l12 - l21).abs() <= 1e-8 * (l11.abs() + l22.abs()), "{b:?}");
            assert_eq!(solver.bilinear(&r1, &DensityField::zeros(&fe)).unwrap(), 0.0);
        }
    }

    #[test]
    fn inequality_battery_passes_on_coarse_mesh() {
        let fe = space(2.0, 0.5);
        let solver = HartreeSolver::new(fe, HartreeBoundary::MonopoleRobin, [0.0; 3]).unwrap();
        let rep = check_hartree_inequalities(&solver, 5, 42).unwrap();
        assert!(rep.passes(1e-10, 1e-12), "{rep:?}");
    }

    #[test]
    fn boundary_names_round_trip() {
        for b in [
            HartreeBoundary::ZeroDirichlet,
            HartreeBoundary::MonopoleDirichlet,
            HartreeBoundary::MonopoleRobin,
        ] {
            assert_eq!(HartreeBoundary::parse(b.name()), Some(b));
        }
        assert_eq!(HartreeBoundary::parse("periodic"), None);
    }
}
