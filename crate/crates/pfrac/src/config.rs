//! Run configuration files (TOML).
//!
//! ```toml
//! workers = 1            # default: PFRAC_WORKERS, else all cores
//! deterministic = true   # report wall times as 0
//! seed = 3               # overrides the vertebra material seed
//!
//! [scenario]
//! kind = "sent"          # "sent", "vertebra" or "mesh"
//! mode = "tension"
//! divisions = 20
//!
//! [solver]
//! scheme = "staggered"
//!
//! [output]
//! directory = "out"
//! vtu_every = 5
//! ```
//!
//! The scenario may instead live in its own file, named by `scenario_file`
//! relative to the configuration file. Every field has a default; see the
//! structs below.

use std::path::{Path, PathBuf};

use pfrac_core::linsolve::LinearSolver;
use pfrac_core::materials::{Calibration, MaterialField, DEFAULT_RESIDUAL_STIFFNESS};
use pfrac_core::mesh::Mesh;
use pfrac_core::postprocess::DEFAULT_FRACTURE_THRESHOLD;
use pfrac_core::scenarios::{
    build_sent, build_vertebra_analog, DirichletSet, ForceSet, LoadProgram, Motion, NodalLoad, Probe, Ramp,
    ReactionMonitor, SentMode, SentSpec, VertebraSpec,
};
use pfrac_core::solvers::{Scheme, SolverConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::msh::{parse_msh, MshError};
use crate::tables::{read_material_csv, TableError};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "PFRAC_WORKERS";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Mesh {
        path: String,
        #[source]
        source: MshError,
    },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Scenario(#[from] pfrac_core::scenarios::ScenarioError),
    #[error(transparent)]
    Material(#[from] pfrac_core::materials::MaterialError),
}

fn invalid(message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(message.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub scenario_file: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioConfig {
    Sent(SentConfig),
    Vertebra(VertebraConfig),
    Mesh(MeshConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentModeConfig {
    Tension,
    Shear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SentConfig {
    pub mode: SentModeConfig,
    pub width: f64,
    pub divisions: usize,
    pub notch_length: f64,
    pub thickness: f64,
    pub e: f64,
    pub nu: f64,
    pub gc: f64,
    pub l: f64,
    pub residual_stiffness: f64,
    pub n_steps: usize,
    /// Top displacement at the last step; 0.01 mm in tension, 0.02 mm in shear.
    pub max_displacement: Option<f64>,
    /// Material CSV replacing the homogeneous field.
    pub materials: Option<PathBuf>,
}

impl Default for SentConfig {
    fn default() -> Self {
        let s = SentSpec::new(SentMode::Tension);
        Self {
            mode: SentModeConfig::Tension,
            width: s.width,
            divisions: s.divisions,
            notch_length: s.notch_length,
            thickness: s.thickness,
            e: s.e,
            nu: s.nu,
            gc: s.gc,
            l: s.l,
            residual_stiffness: s.residual_stiffness,
            n_steps: s.n_steps,
            max_displacement: None,
            materials: None,
        }
    }
}

impl SentConfig {
    pub fn spec(&self) -> SentSpec {
        let mode = match self.mode {
            SentModeConfig::Tension => SentMode::Tension,
            SentModeConfig::Shear => SentMode::Shear,
        };
        let mut s = SentSpec::new(mode);
        s.width = self.width;
        s.divisions = self.divisions;
        s.notch_length = self.notch_length;
        s.thickness = self.thickness;
        s.e = self.e;
        s.nu = self.nu;
        s.gc = self.gc;
        s.l = self.l;
        s.residual_stiffness = self.residual_stiffness;
        s.n_steps = self.n_steps;
        if let Some(d) = self.max_displacement {
            s.max_displacement = d;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionConfig {
    Flexion,
    Extension,
    TorsionCcw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub e0: f64,
    pub gc0: f64,
    pub beta: f64,
    pub sigma_max: f64,
    /// Fixed length scale for every bone element instead of the calibrated one.
    pub length: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        let c = Calibration::default();
        Self {
            e0: c.e0,
            gc0: c.gc0,
            beta: c.beta,
            sigma_max: c.sigma_max,
            length: c.length_override,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VertebraConfig {
    pub lengths: [f64; 3],
    pub divisions: [usize; 3],
    /// (cranio-caudal, medio-lateral) screw angles in degrees.
    pub alpha: [f64; 2],
    pub motion: MotionConfig,
    pub f_v: f64,
    pub n_steps: usize,
    pub step_fraction: f64,
    pub shell_thickness: f64,
    pub screw_radius: f64,
    pub screw_length: f64,
    pub entry_offset: f64,
    pub entry_z: f64,
    pub flexion_direction: [f64; 3],
    pub seed: u64,
    pub mirror_seeds: bool,
    pub residual_stiffness: f64,
    pub calibration: CalibrationConfig,
    pub materials: Option<PathBuf>,
}

impl Default for VertebraConfig {
    fn default() -> Self {
        let v = VertebraSpec::default();
        Self {
            lengths: v.lengths,
            divisions: v.divisions,
            alpha: [v.alpha.0, v.alpha.1],
            motion: MotionConfig::Flexion,
            f_v: v.f_v,
            n_steps: v.n_steps,
            step_fraction: v.step_fraction,
            shell_thickness: v.shell_thickness,
            screw_radius: v.screw_radius,
            screw_length: v.screw_length,
            entry_offset: v.entry_offset,
            entry_z: v.entry_z,
            flexion_direction: v.flexion_direction,
            seed: v.seed,
            mirror_seeds: v.mirror_seeds,
            residual_stiffness: v.residual_stiffness,
            calibration: CalibrationConfig::default(),
            materials: None,
        }
    }
}

impl VertebraConfig {
    pub fn spec(&self) -> VertebraSpec {
        VertebraSpec {
            lengths: self.lengths,
            divisions: self.divisions,
            alpha: (self.alpha[0], self.alpha[1]),
            motion: match self.motion {
                MotionConfig::Flexion => Motion::Flexion,
                MotionConfig::Extension => Motion::Extension,
                MotionConfig::TorsionCcw => Motion::TorsionCcw,
            },
            f_v: self.f_v,
            n_steps: self.n_steps,
            step_fraction: self.step_fraction,
            shell_thickness: self.shell_thickness,
            screw_radius: self.screw_radius,
            screw_length: self.screw_length,
            entry_offset: self.entry_offset,
            entry_z: self.entry_z,
            flexion_direction: self.flexion_direction,
            seed: self.seed,
            mirror_seeds: self.mirror_seeds,
            calibration: Calibration {
                e0: self.calibration.e0,
                gc0: self.calibration.gc0,
                beta: self.calibration.beta,
                sigma_max: self.calibration.sigma_max,
                length_override: self.calibration.length,
            },
            residual_stiffness: self.residual_stiffness,
        }
    }
}

/// Prescribed displacement on the nodes of a facet tag. `components` lists
/// the constrained axes, e.g. `"xz"`; each value is `constant + per_step * step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletConfig {
    pub tag: i32,
    #[serde(default = "all_axes")]
    pub components: String,
    #[serde(default)]
    pub constant: [f64; 3],
    #[serde(default)]
    pub per_step: [f64; 3],
}

fn all_axes() -> String {
    "xyz".to_string()
}

/// Total force on a facet tag (N), spread over its nodes by facet area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TractionConfig {
    pub tag: i32,
    #[serde(default)]
    pub constant: [f64; 3],
    #[serde(default)]
    pub per_step: [f64; 3],
}

/// Reaction on the Dirichlet entry with the same tag, projected on `direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub tag: i32,
    pub direction: [f64; 3],
}

/// A tetrahedral MSH file with homogeneous material and tag-based loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub path: PathBuf,
    pub e: f64,
    pub nu: f64,
    pub gc: f64,
    pub l: f64,
    pub residual_stiffness: f64,
    pub n_steps: usize,
    pub dirichlet: Vec<DirichletConfig>,
    pub tractions: Vec<TractionConfig>,
    pub monitors: Vec<MonitorConfig>,
    /// Facet tag whose nodes give the curve abscissa; defaults to the first monitor.
    pub probe_tag: Option<i32>,
    /// Projection of the probe displacement; mean magnitude when absent.
    pub probe_direction: Option<[f64; 3]>,
    pub materials: Option<PathBuf>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            e: 210_000.0,
            nu: 0.3,
            gc: 2.7,
            l: 0.05,
            residual_stiffness: DEFAULT_RESIDUAL_STIFFNESS,
            n_steps: 40,
            dirichlet: Vec::new(),
            tractions: Vec::new(),
            monitors: Vec::new(),
            probe_tag: None,
            probe_direction: None,
            materials: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    #[default]
    Staggered,
    Monolithic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolverConfig {
    #[default]
    Direct,
    Cg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub scheme: SchemeConfig,
    pub staggered_tol: f64,
    pub newton_tol: f64,
    pub max_staggered_iters: usize,
    pub max_newton_iters: usize,
    pub linear_solver: LinearSolverConfig,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub clamp_screw_history: bool,
    pub monolithic_fallback: bool,
    pub fracture_threshold: f64,
    pub halt_on_full_fracture: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            scheme: SchemeConfig::Staggered,
            staggered_tol: s.staggered_tol,
            newton_tol: s.newton_tol,
            max_staggered_iters: s.max_staggered_iters,
            max_newton_iters: s.max_newton_iters,
            linear_solver: LinearSolverConfig::Direct,
            cg_tol: 1e-10,
            cg_max_iters: 10_000,
            clamp_screw_history: s.clamp_screw_history,
            monolithic_fallback: s.monolithic_fallback,
            fracture_threshold: DEFAULT_FRACTURE_THRESHOLD,
            halt_on_full_fracture: s.halt_on_full_fracture,
        }
    }
}

impl SolverSection {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            staggered_tol: self.staggered_tol,
            newton_tol: self.newton_tol,
            max_staggered_iters: self.max_staggered_iters,
            max_newton_iters: self.max_newton_iters,
            linear_solver: match self.linear_solver {
                LinearSolverConfig::Direct => LinearSolver::Direct,
                LinearSolverConfig::Cg => LinearSolver::Cg {
                    rel_tol: self.cg_tol,
                    max_iters: self.cg_max_iters,
                },
            },
            scheme: match self.scheme {
                SchemeConfig::Staggered => Scheme::Staggered,
                SchemeConfig::Monolithic => Scheme::Monolithic,
            },
            clamp_screw_history: self.clamp_screw_history,
            monolithic_fallback: self.monolithic_fallback,
            fracture_threshold: self.fracture_threshold,
            halt_on_full_fracture: self.halt_on_full_fracture,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Snapshot cadence in steps; 0 keeps only the final snapshot.
    pub vtu_every: usize,
    /// Write VTU snapshots at all.
    pub vtu: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("pfrac-out"),
            vtu_every: 5,
            vtu: true,
        }
    }
}

fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Resolves `p` against `base` unless it is absolute.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn resolve_scenario(base: &Path, s: &mut ScenarioConfig) {
    let materials = match s {
        ScenarioConfig::Sent(c) => &mut c.materials,
        ScenarioConfig::Vertebra(c) => &mut c.materials,
        ScenarioConfig::Mesh(c) => {
            c.path = resolve(base, &c.path);
            &mut c.materials
        }
    };
    if let Some(m) = materials {
        *m = resolve(base, m);
    }
}

impl RunConfig {
    /// Reads a configuration file; relative paths inside it are resolved
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read_text(path)?;
        let mut config: RunConfig = parse_toml(path, &text)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        match (&config.scenario, &config.scenario_file) {
            (Some(_), Some(_)) => return Err(invalid("give either [scenario] or scenario_file, not both")),
            (None, None) => return Err(invalid("no scenario: add a [scenario] table or scenario_file")),
            (None, Some(file)) => {
                let file = resolve(&base, file);
                let mut s: ScenarioConfig = parse_toml(&file, &read_text(&file)?)?;
                resolve_scenario(file.parent().unwrap_or(Path::new("")), &mut s);
                config.scenario = Some(s);
                config.scenario_file = None;
            }
            (Some(_), None) => {
                if let Some(s) = config.scenario.as_mut() {
                    resolve_scenario(&base, s);
                }
            }
        }
        config.output.directory = resolve(&base, &config.output.directory);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scenario.is_none() {
            return Err(invalid("no scenario"));
        }
        if self.workers == Some(0) {
            return Err(invalid("workers must be at least 1"));
        }
        self.solver
            .solver_config()
            .validate()
            .map_err(|e| invalid(format!("solver: {e}")))?;
        Ok(())
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        self.scenario.as_ref().expect("validated configuration has a scenario")
    }

    /// Worker count: the file, then the environment, then all cores.
    pub fn worker_count(&self) -> Result<usize, ConfigError> {
        if let Some(w) = self.workers {
            return Ok(w);
        }
        match std::env::var(WORKERS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(w) if w >= 1 => Ok(w),
                _ => Err(invalid(format!("{WORKERS_ENV} must be a positive integer, got '{v}'"))),
            },
            Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
        }
    }
}

/// Built boundary-value problem.
pub struct Problem {
    pub mesh: Mesh,
    pub materials: MaterialField,
    pub program: LoadProgram,
}

fn override_materials(path: &Option<PathBuf>, k: f64, mesh: &Mesh, field: MaterialField) -> Result<MaterialField, ConfigError> {
    match path {
        None => Ok(field),
        Some(p) => {
            let m = read_material_csv(p, k)?;
            m.check_mesh(mesh)?;
            Ok(m)
        }
    }
}

fn axis(c: char) -> Result<usize, ConfigError> {
    match c {
        'x' => Ok(0),
        'y' => Ok(1),
        'z' => Ok(2),
        other => Err(invalid(format!("unknown axis '{other}' in Dirichlet components"))),
    }
}

fn mesh_problem(c: &MeshConfig) -> Result<Problem, ConfigError> {
    let file = std::fs::File::open(&c.path).map_err(|source| ConfigError::Read {
        path: c.path.display().to_string(),
        source,
    })?;
    let mesh = parse_msh(std::io::BufReader::new(file)).map_err(|source| ConfigError::Mesh {
        path: c.path.display().to_string(),
        source,
    })?;
    if c.n_steps == 0 {
        return Err(invalid("n_steps must be at least 1"));
    }
    let tagged = |tag: i32| {
        let nodes = mesh.nodes_with_tag(tag);
        if nodes.is_empty() {
            Err(invalid(format!("no boundary facets carry tag {tag}")))
        } else {
            Ok(nodes)
        }
    };
    let mut dirichlet = Vec::new();
    for d in &c.dirichlet {
        let mut components = [None; 3];
        for ch in d.components.chars() {
            let k = axis(ch)?;
            components[k] = Some(Ramp {
                constant: d.constant[k],
                per_step: d.per_step[k],
            });
        }
        dirichlet.push(DirichletSet {
            label: format!("tag{}", d.tag),
            nodes: tagged(d.tag)?,
            components,
        });
    }
    let mut forces = Vec::new();
    for t in &c.tractions {
        tagged(t.tag)?;
        let weights = mesh.facet_area_weights(t.tag);
        let total: f64 = weights.iter().map(|&(_, w)| w).sum();
        let loads = weights
            .iter()
            .map(|&(node, w)| NodalLoad {
                node,
                constant: t.constant.map(|f| f * w / total),
                per_step: t.per_step.map(|f| f * w / total),
            })
            .collect();
        forces.push(ForceSet {
            label: format!("tag{}", t.tag),
            loads,
        });
    }
    let mut monitors = Vec::new();
    for m in &c.monitors {
        let set = c
            .dirichlet
            .iter()
            .position(|d| d.tag == m.tag)
            .ok_or_else(|| invalid(format!("monitor tag {} has no Dirichlet entry", m.tag)))?;
        monitors.push(ReactionMonitor {
            label: format!("tag{}", m.tag),
            set,
            direction: m.direction,
        });
    }
    let probe_nodes = match (c.probe_tag, c.monitors.first()) {
        (Some(t), _) => tagged(t)?,
        (None, Some(m)) => tagged(m.tag)?,
        (None, None) => Vec::new(),
    };
    let materials = MaterialField::homogeneous(mesh.tet_count(), c.e, c.nu, c.gc, c.l, c.residual_stiffness)?;
    let materials = override_materials(&c.materials, c.residual_stiffness, &mesh, materials)?;
    let program = LoadProgram {
        n_steps: c.n_steps,
        dirichlet,
        forces,
        phase: Vec::new(),
        monitors,
        probe: Probe {
            nodes: probe_nodes,
            direction: c.probe_direction,
        },
        motion: Motion::Benchmark,
        alpha: (0.0, 0.0),
        f_v: 0.0,
    };
    program.validate(mesh.node_count())?;
    Ok(Problem {
        mesh,
        materials,
        program,
    })
}

impl ScenarioConfig {
    /// Builds the mesh, materials and load program. `seed` replaces the
    /// vertebra material seed when given.
    pub fn build(&self, seed: Option<u64>) -> Result<Problem, ConfigError> {
        let (mesh, materials, program) = match self {
            ScenarioConfig::Sent(c) => {
                let (mesh, m, p) = build_sent(&c.spec())?;
                let m = override_materials(&c.materials, c.residual_stiffness, &mesh, m)?;
                (mesh, m, p)
            }
            ScenarioConfig::Vertebra(c) => {
                let mut spec = c.spec();
                if let Some(s) = seed {
                    spec.seed = s;
                }
                let (mesh, m, p) = build_vertebra_analog(&spec)?;
                let m = override_materials(&c.materials, c.residual_stiffness, &mesh, m)?;
                (mesh, m, p)
            }
            ScenarioConfig::Mesh(c) => return mesh_problem(c),
        };
        Ok(Problem {
            mesh,
            materials,
            program,
        })
    }

    /// The same scenario at refinement level `n`: SENT cells per side, or
    /// vertebra cells along x with y and z scaled to match.
    pub fn refined(&self, n: usize) -> Result<ScenarioConfig, ConfigError> {
        match self {
            ScenarioConfig::Sent(c) => Ok(ScenarioConfig::Sent(SentConfig {
                divisions: n,
                ..c.clone()
            })),
            ScenarioConfig::Vertebra(c) => {
                let [dx, dy, dz] = c.divisions;
                let scale = |d: usize| ((d * n) as f64 / dx as f64).round().max(1.0) as usize;
                Ok(ScenarioConfig::Vertebra(VertebraConfig {
                    divisions: [n, scale(dy), scale(dz)],
                    ..c.clone()
                }))
            }
            ScenarioConfig::Mesh(_) => Err(invalid("mesh-file scenarios have no refinement parameter")),
        }
    }
}
