//! Trace, field and summary files written after a run.
//!
//! Floating-point values are printed with 17 significant digits so that
//! parsing a file gives back the in-memory values exactly. Lines end in LF.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::flow::{FlowState, StepRecord};
use crate::hamiltonian::EnergyBreakdown;
use crate::mesh::Mesh;

pub const ENERGY_TRACE: &str = "energy_trace.csv";
pub const ORTHONORMALITY_TRACE: &str = "orthonormality_trace.csv";
pub const DENSITY_VTK: &str = "density.vtk";
pub const CROSS_SECTION: &str = "cross_section.csv";
pub const SUMMARY: &str = "summary.txt";

/// Samples per axis of the z = 0 cross-section.
pub const CROSS_SECTION_RESOLUTION: usize = 101;

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_energy_trace<W: Write>(mut out: W, history: &[StepRecord]) -> std::io::Result<()> {
    writeln!(out, "step,time,dt,energy,energy_drop,inner_iters_total")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step,
            num(r.time),
            num(r.dt),
            num(r.energy.total),
            num(r.energy_drop),
            r.inner_iterations_total()
        )?;
    }
    Ok(())
}

/// Row 0 holds the initial state.
pub fn write_orthonormality_trace<W: Write>(mut out: W, state: &FlowState) -> std::io::Result<()> {
    writeln!(out, "step,time,orthonormality_error,max_cross_overlap")?;
    writeln!(out, "0,{},{},{}", num(0.0), num(state.initial_orthonormality_error), num(0.0))?;
    for r in &state.history {
        let overlap = r.components.iter().map(|c| c.cross_overlap).fold(0.0, f64::max);
        writeln!(
            out,
            "{},{},{},{}",
            r.step,
            num(r.time),
            num(r.orthonormality_error),
            num(overlap)
        )?;
    }
    Ok(())
}

/// Legacy ASCII VTK unstructured grid with the density as point data.
pub fn write_density_vtk<W: Write>(mut out: W, mesh: &Mesh, density: &[f64]) -> std::io::Result<()> {
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "ksflow electron density")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.node_count())?;
    for p in mesh.nodes() {
        writeln!(out, "{} {} {}", num(p[0]), num(p[1]), num(p[2]))?;
    }
    let tets = mesh.tets();
    writeln!(out, "CELLS {} {}", tets.len(), 5 * tets.len())?;
    for t in tets {
        writeln!(out, "4 {} {} {} {}", t[0], t[1], t[2], t[3])?;
    }
    writeln!(out, "CELL_TYPES {}", tets.len())?;
    for _ in tets {
        writeln!(out, "10")?;
    }
    writeln!(out, "POINT_DATA {}", mesh.node_count())?;
    writeln!(out, "SCALARS density double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in density {
        writeln!(out, "{}", num(*v))?;
    }
    Ok(())
}

/// P1 interpolant of nodal values at `p`; zero outside the mesh.
pub fn interpolate(mesh: &Mesh, nodal: &[f64], p: &[f64; 3]) -> f64 {
    match mesh.locate(p) {
        Some((e, lambda)) => mesh.tets()[e].iter().zip(lambda).map(|(&n, l)| l * nodal[n]).sum(),
        None => 0.0,
    }
}

/// Regular `resolution × resolution` grid over the box at height `z`.
pub fn write_cross_section<W: Write>(
    mut out: W,
    mesh: &Mesh,
    density: &[f64],
    z: f64,
    resolution: usize,
) -> std::io::Result<()> {
    let (lo, hi) = (mesh.domain().lo(), mesh.domain().hi());
    let coord = |a: usize, i: usize| {
        if resolution < 2 {
            0.5 * (lo[a] + hi[a])
        } else {
            lo[a] + (hi[a] - lo[a]) * i as f64 / (resolution - 1) as f64
        }
    };
    writeln!(out, "x,y,density,log10_density")?;
    for j in 0..resolution {
        for i in 0..resolution {
            let (x, y) = (coord(0, i), coord(1, j));
            let rho = interpolate(mesh, density, &[x, y, z]);
            writeln!(out, "{},{},{},{}", num(x), num(y), num(rho), num((rho + 1e-300).log10()))?;
        }
    }
    Ok(())
}

/// Everything `summary.txt` reports.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub label: String,
    pub dofs: usize,
    pub nodes: usize,
    pub orbitals: usize,
    pub hartree: String,
    pub dt_mode: String,
    pub occupation_factor: f64,
    pub energy: EnergyBreakdown,
    pub initial_energy: f64,
    pub charge: f64,
    pub steps: usize,
    pub final_drop: Option<f64>,
    pub max_orthonormality_error: f64,
    pub converged: bool,
    pub wall_time: Duration,
    /// Free-form lines appended at the end, such as an oracle comparison.
    pub extra: Vec<String>,
}

impl RunSummary {
    pub fn from_state(label: &str, state: &FlowState, dofs: usize, nodes: usize) -> Self {
        let waves = state.waves.waves();
        let charge = waves.iter().map(|w| state.waves.mass().quad_form(w)).sum();
        let max_orth = state
            .history
            .iter()
            .map(|r| r.orthonormality_error)
            .fold(state.initial_orthonormality_error, f64::max);
        Self {
            label: label.to_string(),
            dofs,
            nodes,
            orbitals: waves.len(),
            hartree: String::new(),
            dt_mode: String::new(),
            occupation_factor: 2.0,
            energy: state.energy,
            initial_energy: state.initial_energy.total,
            charge,
            steps: state.step,
            final_drop: state.last_energy_drop(),
            max_orthonormality_error: max_orth,
            converged: state.converged,
            wall_time: Duration::ZERO,
            extra: Vec::new(),
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let f = self.occupation_factor;
        writeln!(out, "run: {}", self.label)?;
        writeln!(out, "dofs: {}", self.dofs)?;
        writeln!(out, "nodes: {}", self.nodes)?;
        writeln!(out, "orbitals: {}", self.orbitals)?;
        writeln!(out, "hartree: {}", self.hartree)?;
        writeln!(out, "dt: {}", self.dt_mode)?;
        writeln!(out, "steps: {}", self.steps)?;
        writeln!(out, "converged: {}", self.converged)?;
        match self.final_drop {
            Some(d) => writeln!(out, "final_energy_drop: {}", num(d))?,
            None => writeln!(out, "final_energy_drop: none")?,
        }
        writeln!(out, "max_orthonormality_error: {}", num(self.max_orthonormality_error))?;
        writeln!(out, "initial_energy: {}", num(self.initial_energy))?;
        writeln!(out, "energy_total: {}", num(self.energy.total))?;
        writeln!(out, "energy_kinetic: {}", num(self.energy.kinetic))?;
        writeln!(out, "energy_external: {}", num(self.energy.external))?;
        writeln!(out, "energy_hartree: {}", num(self.energy.hartree))?;
        writeln!(out, "occupation_factor: {f}")?;
        writeln!(out, "occupied_kinetic: {}", num(f * self.energy.kinetic))?;
        writeln!(out, "occupied_external: {}", num(f * self.energy.external))?;
        writeln!(out, "occupied_hartree: {}", num(f * f * self.energy.hartree))?;
        writeln!(
            out,
            "occupied_total: {}",
            num(f * self.energy.kinetic + f * self.energy.external + f * f * self.energy.hartree)
        )?;
        writeln!(out, "electron_count: {}", num(f * self.charge))?;
        writeln!(out, "wall_time_seconds: {:.3}", self.wall_time.as_secs_f64())?;
        if !self.converged {
            writeln!(out, "WARNING: run stopped at the step limit before reaching the energy tolerance")?;
        }
        for line in &self.extra {
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Writes all five artifacts into `dir`, creating it if needed.
pub fn write_artifacts(
    dir: &Path,
    mesh: &Mesh,
    state: &FlowState,
    density: &[f64],
    summary: &RunSummary,
) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let open = |name: &str| -> std::io::Result<(PathBuf, BufWriter<File>)> {
        let path = dir.join(name);
        Ok((path.clone(), BufWriter::new(File::create(path)?)))
    };
    let mut written = Vec::new();

    let (p, mut w) = open(ENERGY_TRACE)?;
    write_energy_trace(&mut w, &state.history)?;
    w.flush()?;
    written.push(p);

    let (p, mut w) = open(ORTHONORMALITY_TRACE)?;
    write_orthonormality_trace(&mut w, state)?;
    w.flush()?;
    written.push(p);

    let (p, mut w) = open(DENSITY_VTK)?;
    write_density_vtk(&mut w, mesh, density)?;
    w.flush()?;
    written.push(p);

    let (p, mut w) = open(CROSS_SECTION)?;
    write_cross_section(&mut w, mesh, density, 0.0, CROSS_SECTION_RESOLUTION)?;
    w.flush()?;
    written.push(p);

    let (p, mut w) = open(SUMMARY)?;
    summary.write(&mut w)?;
    w.flush()?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_graded_box_mesh, BoxDomain, GradingFunction};

    fn tiny_mesh() -> Mesh {
        build_graded_box_mesh(&BoxDomain::cube(1.0).unwrap(), &GradingFunction::Uniform { h: 1.0 }, 27).unwrap()
    }

    #[test]
    fn vtk_counts() {
        let mesh = tiny_mesh();
        let mut buf = Vec::new();
        write_density_vtk(&mut buf, &mesh, &vec![0.5; 27]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(text.contains("POINTS 27 double\n"));
        assert!(text.contains("CELLS 48 240\n"));
        assert!(text.contains("CELL_TYPES 48\n"));
        assert!(text.contains("POINT_DATA 27\nSCALARS density double 1\nLOOKUP_TABLE default\n"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn cross_section_matches_nodes() {
        let mesh = tiny_mesh();
        let nodal: Vec<f64> = mesh.nodes().iter().map(|p| 1.0 + p[0] + 2.0 * p[1] + 3.0 * p[2]).collect();
        let mut buf = Vec::new();
        write_cross_section(&mut buf, &mesh, &nodal, 0.0, 3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y,density,log10_density"));
        let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
        assert_eq!(rows.len(), 9);
        for r in rows {
            assert_eq!(r[2], 1.0 + r[0] + 2.0 * r[1]);
        }

        let mut buf = Vec::new();
        write_cross_section(&mut buf, &mesh, &vec![0.0; 27], 0.0, 4).unwrap();
        for l in String::from_utf8(buf).unwrap().lines().skip(1) {
            assert_eq!(l.split(',').nth(2).unwrap().parse::<f64>().unwrap(), 0.0);
        }
    }

    #[test]
    fn number_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, f64::MAX, 2.0f64.sqrt(), -0.0] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
