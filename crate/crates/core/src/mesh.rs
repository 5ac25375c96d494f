//! Graded tetrahedral meshes of a box.
//!
//! A tensor-product vertex lattice is built with its spacing along each axis
//! driven by a [`GradingFunction`]: nodes equidistribute `1/h` along the axis
//! line through the box center. Each hexahedral cell is then split into six
//! tetrahedra around its main diagonal (Kuhn subdivision), which is
//! conforming across the whole lattice.

use std::collections::HashMap;
use std::io::Write;

use serde::Deserialize;

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Samples per half axis used to tabulate the cumulative `∫ 1/h`.
const AXIS_SAMPLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    lo: Point,
    hi: Point,
}

impl BoxDomain {
    pub fn new(lo: Point, hi: Point) -> Result<Self> {
        for a in 0..3 {
            if !(lo[a].is_finite() && hi[a].is_finite() && lo[a] < hi[a]) {
                return Err(Error::InvalidDomain(format!(
                    "axis {a}: lo = {} must be below hi = {}",
                    lo[a], hi[a]
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[-half, half]^3`.
    pub fn cube(half: f64) -> Result<Self> {
        Self::new([-half; 3], [half; 3])
    }

    pub fn lo(&self) -> Point {
        self.lo
    }

    pub fn hi(&self) -> Point {
        self.hi
    }

    pub fn center(&self) -> Point {
        [0, 1, 2].map(|a| 0.5 * (self.lo[a] + self.hi[a]))
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| self.hi[a] - self.lo[a]).product()
    }

    /// True when `p` lies strictly inside the box.
    pub fn contains_strictly(&self, p: &Point) -> bool {
        (0..3).all(|a| p[a] > self.lo[a] && p[a] < self.hi[a])
    }
}

/// Target edge length `h(x, y, z)`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GradingFunction {
    Uniform { h: f64 },
    /// `|r - center|^2 / scale + offset`.
    Radial {
        center: Point,
        scale: f64,
        offset: f64,
    },
    /// `min(min(|r - a|^2, |r - b|^2) / scale + offset, h_max)`.
    TwoCenter {
        a: Point,
        b: Point,
        scale: f64,
        offset: f64,
        h_max: f64,
    },
    /// `h_inner` inside the ball, `h_outer` beyond `radius + shell`, and a
    /// linear blend across the shell in between.
    Ball {
        center: Point,
        radius: f64,
        shell: f64,
        h_inner: f64,
        h_outer: f64,
    },
}

impl GradingFunction {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidGrading(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            Self::Uniform { h } => positive("h", h),
            Self::Radial { scale, offset, .. } => {
                positive("scale", scale)?;
                positive("offset", offset)
            }
            Self::TwoCenter {
                scale,
                offset,
                h_max,
                ..
            } => {
                positive("scale", scale)?;
                positive("offset", offset)?;
                positive("h_max", h_max)
            }
            Self::Ball {
                radius,
                shell,
                h_inner,
                h_outer,
                ..
            } => {
                positive("radius", radius)?;
                positive("h_inner", h_inner)?;
                positive("h_outer", h_outer)?;
                if shell.is_finite() && shell >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidGrading(format!(
                        "shell must be non-negative, got {shell}"
                    )))
                }
            }
        }
    }

    pub fn eval(&self, p: &Point) -> f64 {
        match *self {
            Self::Uniform { h } => h,
            Self::Radial {
                center,
                scale,
                offset,
            } => dist2(p, &center) / scale + offset,
            Self::TwoCenter {
                a,
                b,
                scale,
                offset,
                h_max,
            } => (dist2(p, &a).min(dist2(p, &b)) / scale + offset).min(h_max),
            Self::Ball {
                center,
                radius,
                shell,
                h_inner,
                h_outer,
            } => {
                let d = dist2(p, &center).sqrt();
                if d <= radius {
                    h_inner
                } else if d >= radius + shell {
                    h_outer
                } else {
                    let s = (d - radius) / shell;
                    h_inner + s * (h_outer - h_inner)
                }
            }
        }
    }

    /// Lower bound of `h` over all of space.
    pub fn h_min(&self) -> f64 {
        match *self {
            Self::Uniform { h } => h,
            Self::Radial { offset, .. } => offset,
            Self::TwoCenter { offset, h_max, .. } => offset.min(h_max),
            Self::Ball {
                h_inner, h_outer, ..
            } => h_inner.min(h_outer),
        }
    }
}

fn dist2(a: &Point, b: &Point) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Cumulative `∫ 1/h` along one axis, tabulated outward from the box center
/// so that a grading symmetric about the center yields a symmetric lattice.
struct AxisDensity {
    center: f64,
    right: Vec<(f64, f64)>,
    left: Vec<(f64, f64)>,
}

impl AxisDensity {
    fn new(domain: &BoxDomain, grading: &GradingFunction, axis: usize) -> Self {
        let c = domain.center();
        let half = |end: f64| {
            let step = (end - c[axis]) / AXIS_SAMPLES as f64;
            let inv_h = |s: f64| {
                let mut p = c;
                p[axis] = s;
                1.0 / grading.eval(&p)
            };
            let mut table = Vec::with_capacity(AXIS_SAMPLES + 1);
            let mut acc = 0.0;
            let mut prev = inv_h(c[axis]);
            table.push((c[axis], 0.0));
            for m in 1..=AXIS_SAMPLES {
                let s = if m == AXIS_SAMPLES {
                    end
                } else {
                    c[axis] + step * m as f64
                };
                let cur = inv_h(s);
                acc += 0.5 * (prev + cur) * step.abs();
                prev = cur;
                table.push((s, acc));
            }
            table
        };
        Self {
            center: c[axis],
            right: half(domain.hi[axis]),
            left: half(domain.lo[axis]),
        }
    }

    fn total(&self) -> f64 {
        self.right.last().unwrap().1 + self.left.last().unwrap().1
    }

    /// Coordinate whose signed cumulative measure from the center is `target`.
    fn invert(&self, target: f64) -> f64 {
        if target == 0.0 {
            return self.center;
        }
        let table = if target > 0.0 { &self.right } else { &self.left };
        let t = target.abs();
        let idx = table.partition_point(|&(_, g)| g < t);
        if idx == 0 {
            return table[0].0;
        }
        if idx >= table.len() {
            return table.last().unwrap().0;
        }
        let (s0, g0) = table[idx - 1];
        let (s1, g1) = table[idx];
        if g1 == g0 {
            s0
        } else {
            s0 + (s1 - s0) * (t - g0) / (g1 - g0)
        }
    }

    fn cells(&self, scale: f64) -> usize {
        let n = (self.total() / (2.0 * scale) - 1e-9).ceil().max(1.0) as usize;
        2 * n
    }

    fn nodes(&self, cells: usize, lo: f64, hi: f64) -> Vec<f64> {
        let left = self.left.last().unwrap().1;
        let right = self.right.last().unwrap().1;
        let total = self.total();
        let mid = (cells / 2) as f64;
        // Offsets are taken from the center so that a symmetric grading
        // yields an exactly mirrored lattice with a node at the center.
        let shift = 0.5 * (right - left);
        (0..=cells)
            .map(|i| {
                if i == 0 {
                    lo
                } else if i == cells {
                    hi
                } else {
                    self.invert(total * (i as f64 - mid) / cells as f64 + shift)
                }
            })
            .collect()
    }
}

/// P1 tetrahedral mesh with homogeneous Dirichlet boundary identification.
#[derive(Debug, Clone)]
pub struct Mesh {
    domain: BoxDomain,
    nodes: Vec<Point>,
    tets: Vec<[usize; 4]>,
    boundary: Vec<bool>,
    dof_of_node: Vec<Option<usize>>,
    node_of_dof: Vec<usize>,
    lattice: Option<[Vec<f64>; 3]>,
    grading_scale: f64,
}

/// Kuhn subdivision of the unit cube: one tetrahedron per axis permutation,
/// each walking from corner 000 to corner 111.
const KUHN_PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// `budget` caps the total node count.
pub fn build_graded_box_mesh(
    domain: &BoxDomain,
    grading: &GradingFunction,
    budget: usize,
) -> Result<Mesh> {
    if budget < 27 {
        return Err(Error::MeshBudget {
            budget,
            constraint: "at least a 3x3x3 vertex lattice (27 nodes) is required".into(),
        });
    }
    build_with_budget(domain, grading, budget, 1)
}

/// Like [`build_graded_box_mesh`] but `budget` caps the interior dof count.
pub fn build_graded_box_mesh_for_dofs(
    domain: &BoxDomain,
    grading: &GradingFunction,
    budget: usize,
) -> Result<Mesh> {
    if budget < 1 {
        return Err(Error::MeshBudget {
            budget,
            constraint: "at least one interior dof is required".into(),
        });
    }
    build_with_budget(domain, grading, budget, -1)
}

/// `offset` is added to the cell count per axis: +1 counts all nodes,
/// -1 counts interior nodes.
fn build_with_budget(
    domain: &BoxDomain,
    grading: &GradingFunction,
    budget: usize,
    offset: isize,
) -> Result<Mesh> {
    grading.validate()?;
    let axes: Vec<AxisDensity> = (0..3).map(|a| AxisDensity::new(domain, grading, a)).collect();
    let count = |scale: f64| -> usize {
        axes.iter()
            .map(|ax| (ax.cells(scale) as isize + offset) as usize)
            .fold(1usize, |acc, n| acc.saturating_mul(n))
    };

    // Smallest uniform coarsening factor of h that fits the node budget.
    let mut scale = 1.0;
    if count(scale) > budget {
        let mut lo = 1.0;
        let mut hi = 2.0;
        while count(hi) > budget {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::MeshBudget {
                    budget,
                    constraint: format!(
                        "h_min = {} cannot be coarsened into the budget",
                        grading.h_min()
                    ),
                });
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        scale = hi;
    }

    let lattice: [Vec<f64>; 3] = [0, 1, 2].map(|a| {
        let ax = &axes[a];
        ax.nodes(ax.cells(scale), domain.lo[a], domain.hi[a])
    });
    let mut mesh = Mesh::from_lattice(*domain, lattice)?;
    mesh.grading_scale = scale;
    Ok(mesh)
}

pub fn interior_dof_count(mesh: &Mesh) -> usize {
    mesh.interior_dof_count()
}

impl Mesh {
    /// Tensor-product mesh on explicit, strictly increasing axis coordinates
    /// whose end points coincide with the box faces.
    pub fn from_lattice(domain: BoxDomain, lattice: [Vec<f64>; 3]) -> Result<Self> {
        for (a, coords) in lattice.iter().enumerate() {
            if coords.len() < 3 {
                return Err(Error::InvalidMesh(format!(
                    "axis {a} needs at least 3 lattice coordinates"
                )));
            }
            if coords[0] != domain.lo[a] || *coords.last().unwrap() != domain.hi[a] {
                return Err(Error::InvalidMesh(format!(
                    "axis {a} lattice does not span the box"
                )));
            }
            if coords.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidMesh(format!(
                    "axis {a} lattice is not strictly increasing"
                )));
            }
        }
        let [nx, ny, nz] = [0, 1, 2].map(|a| lattice[a].len());
        let id = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);

        let mut nodes = Vec::with_capacity(nx * ny * nz);
        let mut boundary = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    nodes.push([lattice[0][i], lattice[1][j], lattice[2][k]]);
                    boundary.push(
                        i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1,
                    );
                }
            }
        }

        let mut tets = Vec::with_capacity(6 * (nx - 1) * (ny - 1) * (nz - 1));
        for k in 0..nz - 1 {
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    for perm in KUHN_PERMUTATIONS {
                        let mut c = [i, j, k];
                        let mut tet = [id(c[0], c[1], c[2]), 0, 0, 0];
                        for (step, &axis) in perm.iter().enumerate() {
                            c[axis] += 1;
                            tet[step + 1] = id(c[0], c[1], c[2]);
                        }
                        if signed_volume(&nodes, &tet) < 0.0 {
                            tet.swap(2, 3);
                        }
                        tets.push(tet);
                    }
                }
            }
        }

        let mut mesh = Self::assemble(domain, nodes, tets, boundary)?;
        mesh.lattice = Some(lattice);
        Ok(mesh)
    }

    /// Mesh from raw parts, e.g. synthetic patches in tests. Element
    /// orientation is normalized to positive signed volume.
    pub fn from_parts(
        domain: BoxDomain,
        nodes: Vec<Point>,
        tets: Vec<[usize; 4]>,
        boundary: Vec<bool>,
    ) -> Result<Self> {
        if boundary.len() != nodes.len() {
            return Err(Error::DimensionMismatch {
                expected: nodes.len(),
                actual: boundary.len(),
            });
        }
        let mut tets = tets;
        for (e, tet) in tets.iter_mut().enumerate() {
            if tet.iter().any(|&n| n >= nodes.len()) {
                return Err(Error::InvalidMesh(format!(
                    "element {e} references a missing node"
                )));
            }
            if signed_volume(&nodes, tet) < 0.0 {
                tet.swap(2, 3);
            }
        }
        Self::assemble(domain, nodes, tets, boundary)
    }

    fn assemble(
        domain: BoxDomain,
        nodes: Vec<Point>,
        tets: Vec<[usize; 4]>,
        boundary: Vec<bool>,
    ) -> Result<Self> {
        for (e, tet) in tets.iter().enumerate() {
            let v = signed_volume(&nodes, tet);
            if !(v > 0.0) {
                return Err(Error::DegenerateElement {
                    element: e,
                    volume: v,
                });
            }
        }
        let mut dof_of_node = vec![None; nodes.len()];
        let mut node_of_dof = Vec::new();
        for (n, &b) in boundary.iter().enumerate() {
            if !b {
                dof_of_node[n] = Some(node_of_dof.len());
                node_of_dof.push(n);
            }
        }
        Ok(Self {
            domain,
            nodes,
            tets,
            boundary,
            dof_of_node,
            node_of_dof,
            lattice: None,
            grading_scale: 1.0,
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.boundary
            .iter()
            .enumerate()
            .filter_map(|(n, &b)| b.then_some(n))
    }

    pub fn interior_dof_count(&self) -> usize {
        self.node_of_dof.len()
    }

    pub fn dof_of_node(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn node_of_dof(&self, dof: usize) -> usize {
        self.node_of_dof[dof]
    }

    /// Lattice coordinates per axis, for tensor-product meshes.
    pub fn lattice(&self) -> Option<&[Vec<f64>; 3]> {
        self.lattice.as_ref()
    }

    /// Uniform factor by which the grading was coarsened to fit the budget
    /// (1 when the budget allowed the requested resolution).
    pub fn grading_scale(&self) -> f64 {
        self.grading_scale
    }

    pub fn tet_volume(&self, element: usize) -> f64 {
        signed_volume(&self.nodes, &self.tets[element])
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|e| self.tet_volume(e)).sum()
    }

    /// Shortest and longest edge over all elements.
    pub fn edge_length_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for tet in &self.tets {
            for a in 0..4 {
                for b in a + 1..4 {
                    let l = dist2(&self.nodes[tet[a]], &self.nodes[tet[b]]).sqrt();
                    lo = lo.min(l);
                    hi = hi.max(l);
                }
            }
        }
        (lo, hi)
    }

    /// Number of elements sharing each triangular facet. A conforming mesh
    /// has 2 for interior facets and 1 for facets on the box surface.
    pub fn facet_multiplicities(&self) -> HashMap<[usize; 3], usize> {
        let mut counts = HashMap::new();
        for tet in &self.tets {
            for skip in 0..4 {
                let mut f = [0; 3];
                let mut m = 0;
                for (a, &n) in tet.iter().enumerate() {
                    if a != skip {
                        f[m] = n;
                        m += 1;
                    }
                }
                f.sort_unstable();
                *counts.entry(f).or_insert(0) += 1;
            }
        }
        counts
    }

    /// True when the facet lies in one face of the bounding box.
    pub fn facet_on_surface(&self, facet: &[usize; 3]) -> bool {
        let lo = self.domain.lo;
        let hi = self.domain.hi;
        (0..3).any(|a| {
            facet.iter().all(|&n| self.nodes[n][a] == lo[a])
                || facet.iter().all(|&n| self.nodes[n][a] == hi[a])
        })
    }

    pub fn check_conformity(&self) -> Result<()> {
        for (facet, count) in self.facet_multiplicities() {
            let expected = if self.facet_on_surface(&facet) { 1 } else { 2 };
            if count != expected {
                return Err(Error::InvalidMesh(format!(
                    "facet {facet:?} is shared by {count} elements, expected {expected}"
                )));
            }
        }
        Ok(())
    }

    /// Barycentric coordinates of `p` in element `e`.
    pub fn barycentric(&self, element: usize, p: &Point) -> [f64; 4] {
        let t = self.tets[element];
        let v = signed_volume(&self.nodes, &t);
        let mut lambda = [0.0; 4];
        for (a, l) in lambda.iter_mut().enumerate() {
            let mut pts = [0; 4].map(|_| [0.0; 3]);
            for b in 0..4 {
                pts[b] = if a == b { *p } else { self.nodes[t[b]] };
            }
            *l = volume_of(&pts) / v;
        }
        lambda
    }

    /// Element containing `p` together with its barycentric coordinates.
    pub fn locate(&self, p: &Point) -> Option<(usize, [f64; 4])> {
        const SLACK: f64 = -1e-10;
        let best_of = |candidates: &mut dyn Iterator<Item = usize>| {
            let mut best: Option<(usize, [f64; 4], f64)> = None;
            for e in candidates {
                let l = self.barycentric(e, p);
                let worst = l.iter().cloned().fold(f64::INFINITY, f64::min);
                if best.as_ref().is_none_or(|b| worst > b.2) {
                    best = Some((e, l, worst));
                }
            }
            best.filter(|b| b.2 >= SLACK).map(|b| (b.0, b.1))
        };
        match &self.lattice {
            Some(axes) => {
                let mut cell = [0usize; 3];
                for a in 0..3 {
                    let c = &axes[a];
                    if p[a] < c[0] || p[a] > *c.last().unwrap() {
                        return None;
                    }
                    let idx = c.partition_point(|&x| x <= p[a]);
                    cell[a] = idx.saturating_sub(1).min(c.len() - 2);
                }
                let (nx, ny) = (axes[0].len() - 1, axes[1].len() - 1);
                let first = 6 * (cell[0] + nx * (cell[1] + ny * cell[2]));
                best_of(&mut (first..first + 6))
            }
            None => best_of(&mut (0..self.tets.len())),
        }
    }

    /// Plain-text dump: a count line, one `x y z` line per node, a count
    /// line, then one `i j k l` line per element.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.nodes.len())?;
        for p in &self.nodes {
            writeln!(out, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2])?;
        }
        writeln!(out, "{}", self.tets.len())?;
        for t in &self.tets {
            writeln!(out, "{} {} {} {}", t[0], t[1], t[2], t[3])?;
        }
        Ok(())
    }
}

pub(crate) fn signed_volume(nodes: &[Point], tet: &[usize; 4]) -> f64 {
    volume_of(&tet.map(|n| nodes[n]))
}

fn volume_of(p: &[Point; 4]) -> f64 {
    let d = |i: usize| [0, 1, 2].map(|a| p[i][a] - p[0][a]);
    let (a, b, c) = (d(1), d(2), d(3));
    let det = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0]);
    det / 6.0
}
