//! P1 finite-element operators on a tetrahedral mesh.
//!
//! Operators are assembled either over the interior degrees of freedom
//! (homogeneous Dirichlet data eliminated) or over all mesh nodes, the
//! latter being what the Hartree solve needs.
//!
//! Every integral involving a potential uses the same symmetric 4-point
//! Gauss rule per element. Its points lie strictly inside each element, so a
//! nucleus sitting on a mesh node is never sampled.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::sparse::{SparseSymMatrix, SparsityPattern};

/// Barycentric coordinates of the 4-point degree-2 rule: point `q` has
/// weight `QUAD_NEAR` on vertex `q` and `QUAD_FAR` on the other three.
pub const QUAD_NEAR: f64 = 0.585_410_196_624_968_5;
pub const QUAD_FAR: f64 = 0.138_196_601_125_010_5;
pub const QUAD_POINTS: usize = 4;

/// Minimum distance from a nucleus at which `V_ext` is evaluated.
pub const NUCLEAR_GUARD: f64 = 1e-12;

#[inline]
pub fn shape_at_quad(q: usize, vertex: usize) -> f64 {
    if q == vertex {
        QUAD_NEAR
    } else {
        QUAD_FAR
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nucleus {
    pub charge: f64,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuclearConfig {
    nuclei: Vec<Nucleus>,
}

impl NuclearConfig {
    /// Validates positive charges and positions strictly inside `domain`.
    pub fn new(nuclei: Vec<Nucleus>, domain: &crate::mesh::BoxDomain) -> Result<Self> {
        for (j, n) in nuclei.iter().enumerate() {
            if !(n.charge.is_finite() && n.charge > 0.0) {
                return Err(Error::InvalidNuclei(format!(
                    "nucleus {j} has non-positive charge {}",
                    n.charge
                )));
            }
            if !domain.contains_strictly(&n.position) {
                return Err(Error::InvalidNuclei(format!(
                    "nucleus {j} at {:?} is not strictly inside the box",
                    n.position
                )));
            }
        }
        Ok(Self { nuclei })
    }

    pub fn nuclei(&self) -> &[Nucleus] {
        &self.nuclei
    }

    pub fn total_charge(&self) -> f64 {
        self.nuclei.iter().map(|n| n.charge).sum()
    }

    /// Charge-weighted center of the nuclei.
    pub fn charge_center(&self) -> Option<Point> {
        let q = self.total_charge();
        (q > 0.0).then(|| {
            [0, 1, 2].map(|a| self.nuclei.iter().map(|n| n.charge * n.position[a]).sum::<f64>() / q)
        })
    }

    fn nearest(&self, p: &Point) -> Option<(usize, f64)> {
        self.nuclei
            .iter()
            .enumerate()
            .map(|(j, n)| (j, distance(p, &n.position)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// `V_ext(p) = -Σ_j Z_j / |p - R_j|`.
    pub fn eval_external_potential(&self, p: &Point) -> Result<f64> {
        if let Some((j, d)) = self.nearest(p) {
            if d < NUCLEAR_GUARD {
                return Err(Error::NuclearSingularity {
                    nucleus: j,
                    distance: d,
                });
            }
        }
        Ok(self.value(p))
    }
}

fn distance(a: &Point, b: &Point) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

pub fn eval_external_potential(config: &NuclearConfig, point: &Point) -> Result<f64> {
    config.eval_external_potential(point)
}

/// A scalar field that can be sampled at quadrature points.
pub trait Potential {
    fn value(&self, p: &Point) -> f64;

    /// Nearest singular point, for diagnostics.
    fn nearest_nucleus(&self, _p: &Point) -> Option<(usize, f64)> {
        None
    }
}

impl<F: Fn(&Point) -> f64> Potential for F {
    fn value(&self, p: &Point) -> f64 {
        self(p)
    }
}

impl Potential for NuclearConfig {
    fn value(&self, p: &Point) -> f64 {
        -self
            .nuclei
            .iter()
            .map(|n| n.charge / distance(p, &n.position))
            .sum::<f64>()
    }

    fn nearest_nucleus(&self, p: &Point) -> Option<(usize, f64)> {
        self.nearest(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofSet {
    /// Non-boundary nodes only.
    Interior,
    /// Every mesh node.
    All,
}

const ABSENT: usize = usize::MAX;

#[derive(Debug)]
struct DofLayout {
    dim: usize,
    pattern: Arc<SparsityPattern>,
    local: Vec<[usize; 4]>,
    scatter: Vec<[usize; 16]>,
}

impl DofLayout {
    fn new(mesh: &Mesh, dof_of: impl Fn(usize) -> Option<usize>, dim: usize) -> Self {
        let local: Vec<[usize; 4]> = mesh
            .tets()
            .iter()
            .map(|t| t.map(|n| dof_of(n).unwrap_or(ABSENT)))
            .collect();
        let groups: Vec<Vec<usize>> = local
            .iter()
            .map(|l| l.iter().copied().filter(|&d| d != ABSENT).collect())
            .collect();
        let pattern = Arc::new(SparsityPattern::from_groups(
            dim,
            groups.iter().map(|g| g.as_slice()),
        ));
        let scatter = local
            .iter()
            .map(|l| {
                let mut s = [ABSENT; 16];
                for a in 0..4 {
                    for b in 0..4 {
                        if l[a] != ABSENT && l[b] != ABSENT {
                            s[4 * a + b] = pattern.position(l[a], l[b]).unwrap();
                        }
                    }
                }
                s
            })
            .collect();
        Self {
            dim,
            pattern,
            local,
            scatter,
        }
    }
}

/// P1 space on a mesh: element geometry plus the interior and all-node
/// degree-of-freedom layouts.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    volumes: Vec<f64>,
    grads: Vec<[[f64; 3]; 4]>,
    interior: DofLayout,
    all: DofLayout,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>) -> Result<Self> {
        let mut volumes = Vec::with_capacity(mesh.tets().len());
        let mut grads = Vec::with_capacity(mesh.tets().len());
        for (e, tet) in mesh.tets().iter().enumerate() {
            let p = tet.map(|n| mesh.nodes()[n]);
            let (vol, g) = element_gradients(&p).ok_or(Error::DegenerateElement {
                element: e,
                volume: mesh.tet_volume(e),
            })?;
            volumes.push(vol);
            grads.push(g);
        }
        let interior = DofLayout::new(&mesh, |n| mesh.dof_of_node(n), mesh.interior_dof_count());
        let all = DofLayout::new(&mesh, Some, mesh.node_count());
        Ok(Self {
            mesh,
            volumes,
            grads,
            interior,
            all,
        })
    }

    fn layout(&self, set: DofSet) -> &DofLayout {
        match set {
            DofSet::Interior => &self.interior,
            DofSet::All => &self.all,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dim(&self, set: DofSet) -> usize {
        self.layout(set).dim
    }

    pub fn pattern(&self, set: DofSet) -> &Arc<SparsityPattern> {
        &self.layout(set).pattern
    }

    pub fn element_count(&self) -> usize {
        self.volumes.len()
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Total number of quadrature points (4 per element).
    pub fn quad_len(&self) -> usize {
        QUAD_POINTS * self.volumes.len()
    }

    /// Quadrature weights, element-major.
    pub fn quad_weights(&self) -> Vec<f64> {
        self.volumes
            .iter()
            .flat_map(|&v| [0.25 * v; QUAD_POINTS])
            .collect()
    }

    /// Physical coordinates of the quadrature points, element-major.
    pub fn quad_points(&self) -> Vec<Point> {
        let nodes = self.mesh.nodes();
        let mut out = Vec::with_capacity(self.quad_len());
        for tet in self.mesh.tets() {
            for q in 0..QUAD_POINTS {
                let mut x = [0.0; 3];
                for (a, &n) in tet.iter().enumerate() {
                    let w = shape_at_quad(q, a);
                    for c in 0..3 {
                        x[c] += w * nodes[n][c];
                    }
                }
                out.push(x);
            }
        }
        out
    }

    fn assemble_with<F>(&self, set: DofSet, mut local: F) -> SparseSymMatrix
    where
        F: FnMut(usize, &mut [[f64; 4]; 4]),
    {
        let layout = self.layout(set);
        let mut m = SparseSymMatrix::zeros(layout.pattern.clone());
        let values = m.values_mut();
        let mut block = [[0.0; 4]; 4];
        for (e, scatter) in layout.scatter.iter().enumerate() {
            local(e, &mut block);
            for a in 0..4 {
                for b in 0..4 {
                    let pos = scatter[4 * a + b];
                    if pos != ABSENT {
                        values[pos] += block[a][b];
                    }
                }
            }
        }
        m
    }

    /// `M[i][j] = ∫ φ_i φ_j`.
    pub fn mass(&self, set: DofSet) -> SparseSymMatrix {
        self.assemble_with(set, |e, block| {
            let v = self.volumes[e] / 20.0;
            for (a, row) in block.iter_mut().enumerate() {
                for (b, x) in row.iter_mut().enumerate() {
                    *x = if a == b { 2.0 * v } else { v };
                }
            }
        })
    }

    /// `K[i][j] = ∫ ∇φ_i · ∇φ_j`.
    pub fn stiffness(&self, set: DofSet) -> SparseSymMatrix {
        self.assemble_with(set, |e, block| {
            let g = &self.grads[e];
            let v = self.volumes[e];
            for a in 0..4 {
                for b in a..4 {
                    let s = v * (g[a][0] * g[b][0] + g[a][1] * g[b][1] + g[a][2] * g[b][2]);
                    block[a][b] = s;
                    block[b][a] = s;
                }
            }
        })
    }

    /// `Σ_e Σ_q w_q f_q φ_i(x_q) φ_j(x_q)` for values `f_q` given at the
    /// quadrature points.
    pub fn quadrature_matrix(&self, set: DofSet, quad_values: &[f64]) -> Result<SparseSymMatrix> {
        if quad_values.len() != self.quad_len() {
            return Err(Error::DimensionMismatch {
                expected: self.quad_len(),
                actual: quad_values.len(),
            });
        }
        Ok(self.assemble_with(set, |e, block| {
            let w = 0.25 * self.volumes[e];
            let f = &quad_values[QUAD_POINTS * e..QUAD_POINTS * (e + 1)];
            for a in 0..4 {
                for b in a..4 {
                    let mut s = 0.0;
                    for (q, fq) in f.iter().enumerate() {
                        s += fq * shape_at_quad(q, a) * shape_at_quad(q, b);
                    }
                    block[a][b] = w * s;
                    block[b][a] = w * s;
                }
            }
        }))
    }

    /// Potential-weighted mass matrix, sampling the potential at the
    /// quadrature points.
    pub fn potential_matrix<P: Potential + ?Sized>(
        &self,
        set: DofSet,
        potential: &P,
    ) -> Result<SparseSymMatrix> {
        let values = self.sample_potential(potential)?;
        self.quadrature_matrix(set, &values)
    }

    /// Potential values at every quadrature point.
    pub fn sample_potential<P: Potential + ?Sized>(&self, potential: &P) -> Result<Vec<f64>> {
        let points = self.quad_points();
        let mut values = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let v = potential.value(p);
            let near = potential.nearest_nucleus(p);
            let guarded = near.is_some_and(|(_, d)| d < NUCLEAR_GUARD);
            if !v.is_finite() || guarded {
                let (nucleus, distance) = near.unwrap_or((usize::MAX, f64::NAN));
                return Err(Error::NonFinitePotential {
                    element: i / QUAD_POINTS,
                    point: *p,
                    nucleus,
                    distance,
                });
            }
            values.push(v);
        }
        Ok(values)
    }

    /// Values at the quadrature points of the P1 function with coefficients
    /// `coeffs` on the given dof set (absent dofs count as zero).
    pub fn interpolate_to_quad(&self, set: DofSet, coeffs: &[f64], out: &mut [f64]) {
        let layout = self.layout(set);
        for (e, l) in layout.local.iter().enumerate() {
            let c = l.map(|d| if d == ABSENT { 0.0 } else { coeffs[d] });
            for q in 0..QUAD_POINTS {
                out[QUAD_POINTS * e + q] = (0..4).map(|a| shape_at_quad(q, a) * c[a]).sum();
            }
        }
    }

    /// `∫ f φ_i` for each dof, with `f` given at the quadrature points.
    pub fn load_vector(&self, set: DofSet, quad_values: &[f64]) -> Vec<f64> {
        let layout = self.layout(set);
        let mut out = vec![0.0; layout.dim];
        for (e, l) in layout.local.iter().enumerate() {
            let w = 0.25 * self.volumes[e];
            let f = &quad_values[QUAD_POINTS * e..QUAD_POINTS * (e + 1)];
            for (a, &d) in l.iter().enumerate() {
                if d != ABSENT {
                    out[d] += w * f.iter().enumerate().map(|(q, fq)| fq * shape_at_quad(q, a)).sum::<f64>();
                }
            }
        }
        out
    }

    /// Interior coefficients extended by zeros to all nodes.
    pub fn extend_to_nodes(&self, interior: &[f64]) -> Vec<f64> {
        (0..self.mesh.node_count())
            .map(|n| self.mesh.dof_of_node(n).map_or(0.0, |d| interior[d]))
            .collect()
    }

    /// Nodal values restricted to the interior dofs.
    pub fn restrict_to_interior(&self, nodal: &[f64]) -> Vec<f64> {
        (0..self.mesh.interior_dof_count())
            .map(|d| nodal[self.mesh.node_of_dof(d)])
            .collect()
    }
}

/// Volume and barycentric-coordinate gradients of a tetrahedron.
fn element_gradients(p: &[Point; 4]) -> Option<(f64, [[f64; 3]; 4])> {
    let e = |i: usize| [0, 1, 2].map(|c| p[i][c] - p[0][c]);
    let (a, b, c) = (e(1), e(2), e(3));
    let cross = |u: [f64; 3], v: [f64; 3]| {
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    };
    let bc = cross(b, c);
    let det = a[0] * bc[0] + a[1] * bc[1] + a[2] * bc[2];
    if !(det > 0.0) {
        return None;
    }
    // Rows of the inverse Jacobian are the gradients of λ1..λ3.
    let g1 = bc.map(|x| x / det);
    let g2 = cross(c, a).map(|x| x / det);
    let g3 = cross(a, b).map(|x| x / det);
    let g0 = [0, 1, 2].map(|k| -(g1[k] + g2[k] + g3[k]));
    Some((det / 6.0, [g0, g1, g2, g3]))
}

pub fn assemble_mass(mesh: &Arc<Mesh>) -> Result<SparseSymMatrix> {
    Ok(FeSpace::new(mesh.clone())?.mass(DofSet::Interior))
}

pub fn assemble_stiffness(mesh: &Arc<Mesh>) -> Result<SparseSymMatrix> {
    Ok(FeSpace::new(mesh.clone())?.stiffness(DofSet::Interior))
}

pub fn assemble_potential_matrix<P: Potential + ?Sized>(
    mesh: &Arc<Mesh>,
    potential: &P,
) -> Result<SparseSymMatrix> {
    FeSpace::new(mesh.clone())?.potential_matrix(DofSet::Interior, potential)
}
