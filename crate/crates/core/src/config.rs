//! Run configuration: presets for the three reference systems, TOML config
//! files and their resolution into a validated [`RunConfig`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::assembly::{NuclearConfig, Nucleus};
use crate::error::{Error, Result};
use crate::flow::{DtSchedule, FlowConfig, InitialRule, Monitors};
use crate::hamiltonian::KohnShamSystem;
use crate::hartree::HartreeBoundary;
use crate::mesh::{build_graded_box_mesh_for_dofs, BoxDomain, GradingFunction, Mesh};

/// Bond parameter of the methane geometry.
pub const CH4_C: f64 = 1.1892;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    He,
    LiH,
    Ch4,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::He, Preset::LiH, Preset::Ch4];

    pub fn name(self) -> &'static str {
        match self {
            Self::He => "he",
            Self::LiH => "lih",
            Self::Ch4 => "ch4",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "he" => Ok(Self::He),
            "lih" => Ok(Self::LiH),
            "ch4" => Ok(Self::Ch4),
            _ => Err(Error::Config(format!("preset: unknown preset '{s}' (expected he, lih or ch4)"))),
        }
    }

    pub fn nuclei(self) -> Vec<Nucleus> {
        let n = |charge: f64, position: [f64; 3]| Nucleus { charge, position };
        match self {
            Self::He => vec![n(2.0, [0.0; 3])],
            Self::LiH => vec![n(1.0, [-1.0075, 0.0, 0.0]), n(3.0, [2.0075, 0.0, 0.0])],
            Self::Ch4 => {
                let c = CH4_C;
                vec![
                    n(6.0, [0.0; 3]),
                    n(1.0, [c, c, c]),
                    n(1.0, [-c, -c, c]),
                    n(1.0, [c, -c, -c]),
                    n(1.0, [-c, c, -c]),
                ]
            }
        }
    }

    pub fn grading(self) -> GradingFunction {
        match self {
            Self::He => GradingFunction::Radial {
                center: [0.0; 3],
                scale: 400.0,
                offset: 0.2,
            },
            // Refinement centers of the reference grading; they do not coincide with
            // the nuclei.
            Self::LiH => GradingFunction::TwoCenter {
                a: [1.0, 0.0, 0.0],
                b: [-2.0, 0.0, 0.0],
                scale: 15.0,
                offset: 0.1,
                h_max: 2.5,
            },
            Self::Ch4 => GradingFunction::Ball {
                center: [0.0; 3],
                radius: 1.8,
                shell: 1.0,
                h_inner: 0.2,
                h_outer: 2.5,
            },
        }
    }

    pub fn dt(self) -> DtSchedule {
        match self {
            Self::He => DtSchedule::Fixed(1e-4),
            Self::LiH => DtSchedule::Fixed(1e-1),
            Self::Ch4 => DtSchedule::Adaptive,
        }
    }

    pub fn initial(self) -> InitialSpec {
        match self {
            Self::He => InitialSpec::Exponential,
            Self::LiH => InitialSpec::UnitVectors,
            Self::Ch4 => InitialSpec::ExponentialThenUnit,
        }
    }

    /// Interior dof counts of the reference meshes.
    pub fn mesh_budget(self) -> usize {
        match self {
            Self::He => 5400,
            Self::LiH => 6909,
            Self::Ch4 => 3323,
        }
    }

    pub fn max_steps(self) -> usize {
        match self {
            Self::He => 20000,
            Self::LiH | Self::Ch4 => 2000,
        }
    }
}

/// Initial-orbital rule without the orbital count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialSpec {
    Exponential,
    UnitVectors,
    ExponentialThenUnit,
    Random,
}

impl InitialSpec {
    pub fn rule(self, n: usize, seed: u64) -> InitialRule {
        match self {
            Self::Exponential if n == 1 => InitialRule::Exponential,
            Self::Exponential | Self::ExponentialThenUnit => InitialRule::ExponentialThenUnit(n),
            Self::UnitVectors => InitialRule::UnitVectors(n),
            Self::Random => InitialRule::Random { n, seed },
        }
    }
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub domain: BoxDomain,
    pub nuclei: Vec<Nucleus>,
    pub n_orbitals: usize,
    pub grading: GradingFunction,
    /// Cap on the interior dof count.
    pub mesh_budget: usize,
    pub dt: DtSchedule,
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub inner_max: usize,
    pub max_steps: usize,
    pub hartree: Option<HartreeBoundary>,
    pub occupation_report_factor: f64,
    pub initial: InitialSpec,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let nuclei = preset.nuclei();
        Self {
            preset: Some(preset),
            domain: BoxDomain::cube(10.0).expect("valid box"),
            n_orbitals: default_orbital_count(&nuclei),
            nuclei,
            grading: preset.grading(),
            mesh_budget: preset.mesh_budget(),
            dt: preset.dt(),
            outer_tol: 1e-6,
            inner_tol: 1e-8,
            inner_max: 200,
            max_steps: preset.max_steps(),
            hartree: Some(HartreeBoundary::default()),
            occupation_report_factor: 2.0,
            initial: preset.initial(),
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.resolve()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        NuclearConfig::new(self.nuclei.clone(), &self.domain)?;
        self.grading.validate()?;
        if self.n_orbitals == 0 {
            return Err(Error::Config("n_orbitals: must be at least 1".into()));
        }
        if self.mesh_budget == 0 {
            return Err(Error::Config("mesh_budget: must be at least 1".into()));
        }
        if !(self.occupation_report_factor > 0.0 && self.occupation_report_factor.is_finite()) {
            return Err(Error::Config("occupation_report_factor: must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps: must be at least 1".into()));
        }
        self.flow_config(Monitors::default()).validate()
    }

    pub fn flow_config(&self, monitors: Monitors) -> FlowConfig {
        FlowConfig {
            dt: self.dt,
            outer_tol: self.outer_tol,
            inner_tol: self.inner_tol,
            inner_max: self.inner_max,
            anderson_depth: crate::flow::DEFAULT_ANDERSON_DEPTH,
            max_steps: self.max_steps,
            monitors,
        }
    }

    pub fn initial_rule(&self) -> InitialRule {
        self.initial.rule(self.n_orbitals, self.seed)
    }

    pub fn nuclear_config(&self) -> Result<NuclearConfig> {
        NuclearConfig::new(self.nuclei.clone(), &self.domain)
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        build_graded_box_mesh_for_dofs(&self.domain, &self.grading, self.mesh_budget)
    }

    /// Mesh, operators and Hartree solver for this configuration.
    pub fn build_system(&self) -> Result<KohnShamSystem> {
        self.validate()?;
        let mesh = Arc::new(self.build_mesh()?);
        KohnShamSystem::new(mesh, self.nuclear_config()?, self.hartree)
    }
}

/// `N = N_e / 2` with `N_e` the total nuclear charge, rounded up.
pub fn default_orbital_count(nuclei: &[Nucleus]) -> usize {
    let total: f64 = nuclei.iter().map(|n| n.charge).sum();
    ((total / 2.0).ceil() as usize).max(1)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<String>,
    n_orbitals: Option<usize>,
    mesh_budget: Option<usize>,
    hartree: Option<bool>,
    hartree_boundary: Option<String>,
    occupation_report_factor: Option<f64>,
    initial: Option<InitialSpec>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    domain: Option<DomainSection>,
    #[serde(default)]
    nuclei: Vec<NucleusSection>,
    grading: Option<GradingFunction>,
    time: Option<TimeSection>,
    flow: Option<FlowSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainSection {
    lo: [f64; 3],
    hi: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NucleusSection {
    charge: f64,
    position: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeSection {
    dt: Option<f64>,
    adaptive: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowSection {
    outer_tol: Option<f64>,
    inner_tol: Option<f64>,
    inner_max: Option<usize>,
    max_steps: Option<usize>,
}

impl ConfigFile {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match &self.preset {
            Some(p) => RunConfig::preset(Preset::parse(p)?),
            None => {
                if self.nuclei.is_empty() {
                    return Err(Error::Config("nuclei: required when no preset is given".into()));
                }
                let domain = self
                    .domain
                    .as_ref()
                    .ok_or_else(|| Error::Config("domain: required when no preset is given".into()))?;
                let domain = BoxDomain::new(domain.lo, domain.hi)?;
                let grading = self
                    .grading
                    .clone()
                    .ok_or_else(|| Error::Config("grading: required when no preset is given".into()))?;
                RunConfig {
                    preset: None,
                    domain,
                    nuclei: Vec::new(),
                    n_orbitals: 0,
                    grading,
                    mesh_budget: 3000,
                    dt: DtSchedule::Fixed(1e-1),
                    outer_tol: 1e-6,
                    inner_tol: 1e-8,
                    inner_max: 200,
                    max_steps: 1000,
                    hartree: Some(HartreeBoundary::default()),
                    occupation_report_factor: 2.0,
                    initial: InitialSpec::UnitVectors,
                    seed: 0,
                    out_dir: PathBuf::from("out"),
                }
            }
        };
        if let Some(d) = &self.domain {
            cfg.domain = BoxDomain::new(d.lo, d.hi)?;
        }
        if !self.nuclei.is_empty() {
            cfg.nuclei = self
                .nuclei
                .iter()
                .map(|n| Nucleus {
                    charge: n.charge,
                    position: n.position,
                })
                .collect();
            cfg.n_orbitals = default_orbital_count(&cfg.nuclei);
        }
        if let Some(n) = self.n_orbitals {
            cfg.n_orbitals = n;
        }
        if let Some(g) = self.grading {
            cfg.grading = g;
        }
        if let Some(b) = self.mesh_budget {
            cfg.mesh_budget = b;
        }
        let boundary = match &self.hartree_boundary {
            Some(s) => Some(HartreeBoundary::parse(s).ok_or_else(|| {
                Error::Config(format!(
                    "hartree_boundary: unknown value '{s}' (expected zero, monopole-dirichlet or monopole-robin)"
                ))
            })?),
            None => None,
        };
        match self.hartree {
            Some(false) => cfg.hartree = None,
            Some(true) | None => {
                if let Some(b) = boundary {
                    cfg.hartree = Some(b);
                }
            }
        }
        if let Some(f) = self.occupation_report_factor {
            cfg.occupation_report_factor = f;
        }
        if let Some(i) = self.initial {
            cfg.initial = i;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = self.out_dir {
            cfg.out_dir = o;
        }
        if let Some(t) = self.time {
            match (t.dt, t.adaptive) {
                (Some(_), Some(true)) => {
                    return Err(Error::Config("time: dt and adaptive = true are mutually exclusive".into()))
                }
                (Some(dt), _) => cfg.dt = DtSchedule::Fixed(dt),
                (None, Some(true)) => cfg.dt = DtSchedule::Adaptive,
                (None, Some(false)) => {
                    if cfg.dt == DtSchedule::Adaptive {
                        return Err(Error::Config("time: adaptive = false requires dt".into()));
                    }
                }
                (None, None) => {}
            }
        }
        if let Some(f) = self.flow {
            if let Some(v) = f.outer_tol {
                cfg.outer_tol = v;
            }
            if let Some(v) = f.inner_tol {
                cfg.inner_tol = v;
            }
            if let Some(v) = f.inner_max {
                cfg.inner_max = v;
            }
            if let Some(v) = f.max_steps {
                cfg.max_steps = v;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Text of `config-reference.txt`.
pub fn config_reference() -> String {
    let mut s = String::new();
    s.push_str(
        "ksflow configuration reference
==============================

Config files are TOML: top-level `key = value` pairs plus the sections
[domain], [grading], [time], [flow] and repeated [[nuclei]] tables.
Unknown keys are rejected. Keys given explicitly override the preset.

Top level
---------
preset                    he | lih | ch4. Optional; without it, domain,
                          nuclei and grading are required.
n_orbitals                Number of orbitals N. Default: ceil(total nuclear
                          charge / 2).
mesh_budget               Maximum number of interior dofs. The grading is
                          coarsened uniformly until the mesh fits.
                          Default: preset value, else 3000.
hartree                   true | false. Default: true.
hartree_boundary          monopole-robin | monopole-dirichlet | zero.
                          Default: monopole-robin.
occupation_report_factor  Occupation used only when reporting physical
                          charge and energy in summary.txt. Default: 2.
initial                   exponential | unit-vectors | exponential-then-unit
                          | random. Default: preset value, else unit-vectors.
seed                      Seed for initial = random. Default: 0.
out_dir                   Output directory. Default: out.

[domain]
--------
lo = [x, y, z]            Lower box corner.
hi = [x, y, z]            Upper box corner.
Default: [-10, 10]^3.

[[nuclei]]
----------
charge = Z                Positive nuclear charge.
position = [x, y, z]      Strictly inside the box.

[grading]
---------
kind = \"uniform\"          h
kind = \"radial\"           center, scale, offset:
                          h = |r - center|^2 / scale + offset
kind = \"two-center\"       a, b, scale, offset, h_max:
                          h = min(min(|r-a|^2, |r-b|^2) / scale + offset, h_max)
kind = \"ball\"             center, radius, shell, h_inner, h_outer:
                          h_inner inside the ball, h_outer beyond
                          radius + shell, linear in between.

[time]
------
dt                        Fixed time step.
adaptive                  true selects the two-level rule: 5e-2 while the
                          last |dE| >= 1e-2, else 5e-4. First step 5e-2.

[flow]
------
outer_tol                 Stop when |E(n+1) - E(n)| <= outer_tol.
                          Default: 1e-6.
inner_tol                 Fixed-point tolerance on the M-norm of the
                          iterate increment. Default: 1e-8.
inner_max                 Fixed-point iteration cap. Default: 200.
max_steps                 Time-step cap. Default: preset value, else 1000.

Presets
-------
",
    );
    for p in Preset::ALL {
        let c = RunConfig::preset(p);
        let dt = match c.dt {
            DtSchedule::Fixed(dt) => format!("dt = {dt:e}"),
            DtSchedule::Adaptive => "adaptive".to_string(),
        };
        let nuclei: Vec<String> = c
            .nuclei
            .iter()
            .map(|n| format!("Z={} at ({}, {}, {})", n.charge, n.position[0], n.position[1], n.position[2]))
            .collect();
        s.push_str(&format!(
            "{:<4} N = {}, {}, mesh_budget = {}, max_steps = {}\n     nuclei: {}\n",
            p.name(),
            c.n_orbitals,
            dt,
            c.mesh_budget,
            c.max_steps,
            nuclei.join(", ")
        ));
    }
    s
}
