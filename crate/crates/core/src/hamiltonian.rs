//! Discrete Kohn-Sham Hamiltonian, total energy and the mass inner product.

use std::fmt;
use std::sync::Arc;

use crate::assembly::{DofSet, FeSpace, NuclearConfig};
use crate::error::{Error, Result};
use crate::hartree::{compute_density, DensityField, HartreeBoundary, HartreePotential, HartreeSolver};
use crate::mesh::Mesh;
use crate::sparse::SparseSymMatrix;

/// Coefficients of a P1 function at the interior dofs.
pub type NodalField = Vec<f64>;

/// `aᵀ M b`.
pub fn l2_inner(a: &[f64], b: &[f64], mass: &SparseSymMatrix) -> Result<f64> {
    if a.len() != mass.dim() || b.len() != mass.dim() {
        return Err(Error::DimensionMismatch {
            expected: mass.dim(),
            actual: if a.len() != mass.dim() { a.len() } else { b.len() },
        });
    }
    Ok(mass.bilinear(a, b))
}

/// The discrete orbitals `Ψ` together with the mass matrix defining their
/// inner product.
#[derive(Debug, Clone)]
pub struct WaveFunctionSet {
    waves: Vec<NodalField>,
    mass: Arc<SparseSymMatrix>,
}

impl WaveFunctionSet {
    pub fn new(waves: Vec<NodalField>, mass: Arc<SparseSymMatrix>) -> Result<Self> {
        for w in &waves {
            if w.len() != mass.dim() {
                return Err(Error::DimensionMismatch {
                    expected: mass.dim(),
                    actual: w.len(),
                });
            }
        }
        Ok(Self { waves, mass })
    }

    pub fn len(&self) -> usize {
        self.waves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }

    pub fn waves(&self) -> &[NodalField] {
        &self.waves
    }

    pub fn wave(&self, k: usize) -> &[f64] {
        &self.waves[k]
    }

    pub fn mass(&self) -> &Arc<SparseSymMatrix> {
        &self.mass
    }

    pub fn as_slices(&self) -> Vec<&[f64]> {
        self.waves.iter().map(|w| w.as_slice()).collect()
    }

    pub(crate) fn set_wave(&mut self, k: usize, wave: NodalField) {
        debug_assert_eq!(wave.len(), self.mass.dim());
        self.waves[k] = wave;
    }

    pub fn into_waves(self) -> Vec<NodalField> {
        self.waves
    }

    /// Gram matrix `G_ij = wᵢᵀ M wⱼ`, row-major.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let mw: Vec<Vec<f64>> = self.waves.iter().map(|w| self.mass.mul_vec(w)).collect();
        self.waves
            .iter()
            .map(|wi| mw.iter().map(|mwj| crate::sparse::dot(wi, mwj)).collect())
            .collect()
    }

    /// `max_ij |G_ij - δ_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.gram();
        let mut worst: f64 = 0.0;
        for (i, row) in g.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }
}

/// Where an orbital in a Hamiltonian's source configuration comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrbitalTag {
    /// Already updated in the current sweep.
    New,
    /// Current inner fixed-point iterate `j` of the orbital being updated.
    Inner(usize),
    /// Value from the previous time level.
    Old,
    /// Plain configuration outside the stepper.
    Given,
}

impl fmt::Display for OrbitalTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::New => write!(f, "n+1"),
            Self::Inner(j) => write!(f, "n+1,j={j}"),
            Self::Old => write!(f, "n"),
            Self::Given => write!(f, "given"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HamiltonianMatrix {
    matrix: SparseSymMatrix,
    built_from: Vec<OrbitalTag>,
    hartree: Option<HartreePotential>,
}

impl HamiltonianMatrix {
    pub fn matrix(&self) -> &SparseSymMatrix {
        &self.matrix
    }

    pub fn built_from(&self) -> &[OrbitalTag] {
        &self.built_from
    }

    /// Audit string such as `[n+1, n+1,j=2, n]`.
    pub fn built_from_label(&self) -> String {
        let parts: Vec<String> = self.built_from.iter().map(|t| t.to_string()).collect();
        format!("[{}]", parts.join(", "))
    }

    pub fn hartree_potential(&self) -> Option<&HartreePotential> {
        self.hartree.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub external: f64,
    pub hartree: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn zero() -> Self {
        Self {
            kinetic: 0.0,
            external: 0.0,
            hartree: 0.0,
            total: 0.0,
        }
    }
}

/// Everything needed to evaluate `H(Ψ)` and `E(Ψ)` on one mesh.
#[derive(Debug)]
pub struct KohnShamSystem {
    fe: Arc<FeSpace>,
    nuclei: NuclearConfig,
    mass: Arc<SparseSymMatrix>,
    stiffness: SparseSymMatrix,
    external: SparseSymMatrix,
    /// `½K + M_ext`.
    linear: SparseSymMatrix,
    hartree: Option<HartreeSolver>,
}

impl KohnShamSystem {
    /// `hartree = None` gives the linear problem. The monopole center of the
    /// Hartree closure is the nuclear charge center.
    pub fn new(mesh: Arc<Mesh>, nuclei: NuclearConfig, hartree: Option<HartreeBoundary>) -> Result<Self> {
        let fe = Arc::new(FeSpace::new(mesh)?);
        let mass = Arc::new(fe.mass(DofSet::Interior));
        let stiffness = fe.stiffness(DofSet::Interior);
        let external = fe.potential_matrix(DofSet::Interior, &nuclei)?;
        let linear = SparseSymMatrix::linear_combination(&[(0.5, &stiffness), (1.0, &external)])?;
        let hartree = match hartree {
            Some(b) => {
                let center = nuclei
                    .charge_center()
                    .unwrap_or_else(|| fe.mesh().domain().center());
                Some(HartreeSolver::new(fe.clone(), b, center)?)
            }
            None => None,
        };
        Ok(Self {
            fe,
            nuclei,
            mass,
            stiffness,
            external,
            linear,
            hartree,
        })
    }

    pub fn fe(&self) -> &Arc<FeSpace> {
        &self.fe
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.fe.mesh()
    }

    pub fn nuclei(&self) -> &NuclearConfig {
        &self.nuclei
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn mass(&self) -> &Arc<SparseSymMatrix> {
        &self.mass
    }

    pub fn stiffness(&self) -> &SparseSymMatrix {
        &self.stiffness
    }

    pub fn external(&self) -> &SparseSymMatrix {
        &self.external
    }

    /// `H_L = ½K + M_ext`.
    pub fn linear_hamiltonian(&self) -> &SparseSymMatrix {
        &self.linear
    }

    pub fn hartree_solver(&self) -> Option<&HartreeSolver> {
        self.hartree.as_ref()
    }

    pub fn hartree_enabled(&self) -> bool {
        self.hartree.is_some()
    }

    pub fn density(&self, orbitals: &[&[f64]]) -> DensityField {
        compute_density(&self.fe, orbitals)
    }

    /// `½K + M_ext + M_Har(ρ)` with ρ from the given orbitals, recording
    /// their provenance in `tags`.
    pub fn build_hamiltonian(
        &self,
        orbitals: &[&[f64]],
        tags: Vec<OrbitalTag>,
        guess: Option<&HartreePotential>,
    ) -> Result<HamiltonianMatrix> {
        if tags.len() != orbitals.len() {
            return Err(Error::DimensionMismatch {
                expected: orbitals.len(),
                actual: tags.len(),
            });
        }
        for o in orbitals {
            if o.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    actual: o.len(),
                });
            }
        }
        let Some(solver) = &self.hartree else {
            return Ok(HamiltonianMatrix {
                matrix: self.linear.clone(),
                built_from: tags,
                hartree: None,
            });
        };
        let rho = self.density(orbitals);
        let v = solver.solve_from(&rho, guess)?;
        let vq = solver.potential_at_quad(&v);
        let mh = self.fe.quadrature_matrix(DofSet::Interior, &vq)?;
        let matrix = SparseSymMatrix::linear_combination(&[(1.0, &self.linear), (1.0, &mh)])?;
        Ok(HamiltonianMatrix {
            matrix,
            built_from: tags,
            hartree: Some(v),
        })
    }

    /// Hamiltonian of a plain configuration.
    pub fn hamiltonian_of(&self, waves: &WaveFunctionSet) -> Result<HamiltonianMatrix> {
        self.build_hamiltonian(&waves.as_slices(), vec![OrbitalTag::Given; waves.len()], None)
    }

    pub fn total_energy(&self, orbitals: &[&[f64]]) -> Result<EnergyBreakdown> {
        self.total_energy_with(orbitals, None).map(|(e, _)| e)
    }

    /// Energy plus the Hartree potential of the configuration, for reuse
    /// as a warm start.
    pub fn total_energy_with(
        &self,
        orbitals: &[&[f64]],
        guess: Option<&HartreePotential>,
    ) -> Result<(EnergyBreakdown, Option<HartreePotential>)> {
        let mut e = EnergyBreakdown::zero();
        for o in orbitals {
            e.kinetic += 0.5 * self.stiffness.quad_form(o);
            e.external += self.external.quad_form(o);
        }
        let mut potential = None;
        if let Some(solver) = &self.hartree {
            let rho = self.density(orbitals);
            let v = solver.solve_from(&rho, guess)?;
            e.hartree = 0.5 * solver.pairing(&v, &rho);
            potential = Some(v);
        }
        e.total = e.kinetic + e.external + e.hartree;
        Ok((e, potential))
    }

    /// `Σ_l ⟨(H_L + ½H_Har) ψ_l, ψ_l⟩` evaluated through the assembled
    /// Hamiltonian, independent of the breakdown path.
    pub fn energy_via_operator(&self, orbitals: &[&[f64]]) -> Result<f64> {
        let h = self.build_hamiltonian(orbitals, vec![OrbitalTag::Given; orbitals.len()], None)?;
        let mut total = 0.0;
        for o in orbitals {
            let full = h.matrix.quad_form(o);
            let lin = self.linear.quad_form(o);
            total += 0.5 * (full + lin);
        }
        Ok(total)
    }

    /// `½ Σ_lm ⟨L ψ_l², ψ_m²⟩` with one Poisson solve per pair.
    pub fn hartree_double_sum(&self, orbitals: &[&[f64]]) -> Result<f64> {
        let Some(solver) = &self.hartree else {
            return Ok(0.0);
        };
        let rhos: Vec<DensityField> = orbitals.iter().map(|o| self.density(&[o])).collect();
        let mut total = 0.0;
        for a in &rhos {
            for b in &rhos {
                total += solver.bilinear(a, b)?;
            }
        }
        Ok(0.5 * total)
    }
}

pub fn build_hamiltonian(system: &KohnShamSystem, waves: &WaveFunctionSet) -> Result<HamiltonianMatrix> {
    system.hamiltonian_of(waves)
}

pub fn total_energy(system: &KohnShamSystem, waves: &WaveFunctionSet) -> Result<EnergyBreakdown> {
    system.total_energy(&waves.as_slices())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::Nucleus;
    use crate::mesh::{build_graded_box_mesh, BoxDomain, GradingFunction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn he_system(hartree: bool) -> KohnShamSystem {
        let domain = BoxDomain::cube(4.0).unwrap();
        let mesh = build_graded_box_mesh(&domain, &GradingFunction::Uniform { h: 0.8 }, 100_000).unwrap();
        let nuclei = NuclearConfig::new(
            vec![Nucleus {
                charge: 2.0,
                position: [0.0; 3],
            }],
            &domain,
        )
        .unwrap();
        KohnShamSystem::new(
            Arc::new(mesh),
            nuclei,
            hartree.then_some(HartreeBoundary::MonopoleRobin),
        )
        .unwrap()
    }

    fn random_orthonormal(sys: &KohnShamSystem, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = sys.mass();
        let mut out: Vec<Vec<f64>> = Vec::new();
        for _ in 0..n {
            let mut v: Vec<f64> = (0..sys.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
            for _ in 0..2 {
                for u in &out {
                    let c = m.bilinear(u, &v);
                    crate::sparse::axpy(-c, u, &mut v);
                }
            }
            let nrm = m.quad_form(&v).sqrt();
            v.iter_mut().for_each(|x| *x /= nrm);
            out.push(v);
        }
        out
    }

    #[test]
    fn l2_inner_basics() {
        let sys = he_system(false);
        let m = sys.mass();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..sys.dim()).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..sys.dim()).map(|_| rng.random::<f64>()).collect();
        let zero = vec![0.0; sys.dim()];
        assert_eq!(l2_inner(&a, &zero, m).unwrap(), 0.0);
        assert!(l2_inner(&a, &a, m).unwrap() > 0.0);
        let ab = l2_inner(&a, &b, m).unwrap();
        let ba = l2_inner(&b, &a, m).unwrap();
        assert!((ab - ba).abs() <= 1e-14 * ab.abs());
        assert!(l2_inner(&a[1..], &b, m).is_err());
    }

    #[test]
    fn hartree_off_matrix_is_linear_part() {
        let sys = he_system(false);
        let w = random_orthonormal(&sys, 1, 1);
        let h = sys.build_hamiltonian(&[&w[0]], vec![OrbitalTag::Given], None).unwrap();
        assert_eq!(h.matrix().values(), sys.linear_hamiltonian().values());
    }

    #[test]
    fn zero_orbitals_leave_linear_part() {
        let sys = he_system(true);
        let zero = vec![0.0; sys.dim()];
        let h = sys.build_hamiltonian(&[&zero], vec![OrbitalTag::Given], None).unwrap();
        assert_eq!(h.matrix().values(), sys.linear_hamiltonian().values());
        let e = sys.total_energy(&[&zero]).unwrap();
        assert_eq!(e, EnergyBreakdown::zero());
    }

    #[test]
    fn hamiltonian_is_symmetric() {
        let sys = he_system(true);
        let w = random_orthonormal(&sys, 2, 2);
        let h = sys.build_hamiltonian(&[&w[0], &w[1]], vec![OrbitalTag::New, OrbitalTag::Old], None).unwrap();
        assert_eq!(h.matrix().max_asymmetry(), 0.0);
        assert_eq!(h.built_from_label(), "[n+1, n]");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..sys.dim()).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..sys.dim()).map(|_| rng.random::<f64>()).collect();
        let hab = h.matrix().bilinear(&a, &b);
        let hba = h.matrix().bilinear(&b, &a);
        assert!((hab - hba).abs() <= 1e-14 * hab.abs().max(1.0));
    }

    #[test]
    fn kinetic_only_energy() {
        let domain = BoxDomain::cube(2.0).unwrap();
        let mesh = build_graded_box_mesh(&domain, &GradingFunction::Uniform { h: 0.5 }, 100_000).unwrap();
        let fe = FeSpace::new(Arc::new(mesh.clone())).unwrap();
        let k = fe.stiffness(DofSet::Interior);
        // A far-away weak nucleus is the closest we can get to V_ext = 0 in
        // a validated config, so compare only the kinetic component.
        let nuclei = NuclearConfig::new(
            vec![Nucleus {
                charge: 1.0,
                position: [0.0; 3],
            }],
            &domain,
        )
        .unwrap();
        let sys = KohnShamSystem::new(Arc::new(mesh), nuclei, None).unwrap();
        let w = random_orthonormal(&sys, 1, 4);
        let e = sys.total_energy(&[&w[0]]).unwrap();
        assert_eq!(e.kinetic, 0.5 * k.quad_form(&w[0]));
        assert_eq!(e.hartree, 0.0);
    }

    #[test]
    fn breakdown_sums_and_matches_operator_form() {
        let sys = he_system(true);
        let w = random_orthonormal(&sys, 2, 5);
        let o = [w[0].as_slice(), w[1].as_slice()];
        let e = sys.total_energy(&o).unwrap();
        let sum = e.kinetic + e.external + e.hartree;
        assert!((e.total - sum).abs() <= 1e-12 * e.total.abs());
        let op = sys.energy_via_operator(&o).unwrap();
        assert!((op - e.total).abs() <= 1e-10 * e.total.abs(), "{op} vs {}", e.total);
    }

    #[test]
    fn double_sum_identity() {
        let sys = he_system(true);
        let w = random_orthonormal(&sys, 2, 6);
        let o = [w[0].as_slice(), w[1].as_slice()];
        let e = sys.total_energy(&o).unwrap();
        let ds = sys.hartree_double_sum(&o).unwrap();
        assert!((ds - e.hartree).abs() <= 1e-10 * e.hartree.abs(), "{ds} vs {}", e.hartree);
    }

    #[test]
    fn orthonormality_error_cases() {
        let sys = he_system(false);
        let w = random_orthonormal(&sys, 3, 7);
        let set = WaveFunctionSet::new(w.clone(), sys.mass().clone()).unwrap();
        assert!(set.orthonormality_error() <= 1e-13);
        let dup = WaveFunctionSet::new(vec![w[0].clone(), w[0].clone()], sys.mass().clone()).unwrap();
        assert!(dup.orthonormality_error() >= 1.0 - 1e-12);
    }
}
