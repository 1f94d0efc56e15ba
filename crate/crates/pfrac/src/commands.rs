//! Command drivers behind the `pfrac` binary. Each returns a [`CliError`]
//! whose [`CliError::exit_code`] is 1 for configuration or input problems
//! and 2 for solver failures.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use pfrac_core::assembly::FieldState;
use pfrac_core::materials::{gc_power_law, length_scale, MaterialField};
use pfrac_core::mesh::Mesh;
use pfrac_core::postprocess::{relative_error_curve, CurveSeries, CONVERGENCE_PERCENT};
use pfrac_core::solvers::{run_load_program, NullObserver, ProgramOutcome, SolverError, StepObserver, StepReport, Termination};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, Problem, RunConfig, ScenarioConfig};
use crate::msh::{parse_msh, MshError};
use crate::tables::{write_curves_csv, write_material_csv, StepCsv, TableError};
use crate::vtu::write_vtu;
use crate::OutputError;

/// Version of the JSON summary layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("{path}: {source}")]
    Mesh {
        path: String,
        #[source]
        source: MshError,
    },
    #[error("{0}")]
    Input(String),
    #[error("solver failed at step {step}: {reason}")]
    StepFailed { step: usize, reason: String },
    #[error("solver error: {0}")]
    Solver(#[from] SolverError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::StepFailed { .. } | CliError::Solver(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub scheme: String,
    /// `completed`, `fully_fractured` or `failed`.
    pub termination: String,
    pub termination_step: Option<usize>,
    pub failure: Option<String>,
    pub n_steps: usize,
    pub converged_steps: usize,
    pub fallback_steps: usize,
    pub nodes: usize,
    pub tets: usize,
    pub dofs: usize,
    /// Signed reaction of the first monitor with the largest magnitude (N).
    pub peak_load: f64,
    /// Step of the peak, 0 when no step converged.
    pub peak_step: usize,
    pub peak_probe: f64,
    /// Fractured volume at the last converged step (mm^3).
    pub total_fractured_volume: f64,
    /// Seconds; 0 in deterministic mode.
    pub wall_time: f64,
}

pub struct RunResult {
    pub summary: RunSummary,
    pub outcome: ProgramOutcome,
}

fn scenario_name(s: &ScenarioConfig) -> &'static str {
    match s {
        ScenarioConfig::Sent(_) => "sent",
        ScenarioConfig::Vertebra(_) => "vertebra",
        ScenarioConfig::Mesh(_) => "mesh",
    }
}

/// Writes rows and periodic snapshots as steps complete.
struct RunObserver<'a> {
    clock: Instant,
    steps: StepCsv,
    mesh: &'a Mesh,
    materials: &'a MaterialField,
    dir: &'a Path,
    vtu_every: usize,
    error: Option<CliError>,
    extra: &'a mut (dyn StepObserver + Send),
}

impl StepObserver for RunObserver<'_> {
    fn on_step(&mut self, report: &StepReport, state: &FieldState) {
        self.extra.on_step(report, state);
        if self.error.is_some() {
            return;
        }
        if let Err(e) = self.steps.push(report) {
            self.error = Some(e.into());
            return;
        }
        if self.vtu_every > 0 && report.converged && report.step.is_multiple_of(self.vtu_every) {
            let path = self.dir.join(format!("step_{:04}.vtu", report.step));
            if let Err(e) = write_vtu(self.mesh, state, self.materials, &path) {
                self.error = Some(e.into());
            }
        }
    }

    fn elapsed(&self) -> f64 {
        self.clock.elapsed().as_secs_f64()
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| OutputError::new(dir, e).into())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| OutputError::new(path, e).into())
}

/// Curves of the converged steps: reaction against probe per monitor, and
/// fractured volume against step.
pub fn curves(program_monitors: &[String], reports: &[StepReport]) -> (Vec<CurveSeries>, CurveSeries) {
    let ok: Vec<&StepReport> = reports.iter().filter(|r| r.converged).collect();
    let force = program_monitors
        .iter()
        .enumerate()
        .map(|(i, label)| CurveSeries {
            abscissa: ok.iter().map(|r| r.probe).collect(),
            ordinate: ok.iter().map(|r| r.reactions[i]).collect(),
            label: label.clone(),
        })
        .collect();
    let volume = CurveSeries {
        abscissa: ok.iter().map(|r| r.step as f64).collect(),
        ordinate: ok.iter().map(|r| r.fractured_volume).collect(),
        label: "fractured_volume".to_string(),
    };
    (force, volume)
}

/// Solves `problem` and writes every output into `dir`:
/// `steps.csv`, `force_displacement.csv`, `fractured_volume.csv`,
/// `materials.csv`, `summary.json` and VTU snapshots. `extra` sees every
/// step as well.
pub fn run_problem(
    problem: &Problem,
    config: &RunConfig,
    dir: &Path,
    extra: &mut (dyn StepObserver + Send),
) -> Result<RunResult, CliError> {
    create_dir(dir)?;
    let solver = config.solver.solver_config();
    let Problem {
        mesh,
        materials,
        program,
    } = problem;
    write_material_csv(materials, &dir.join("materials.csv"))?;
    let labels: Vec<String> = program.monitors.iter().map(|m| m.label.clone()).collect();
    let mut observer = RunObserver {
        clock: Instant::now(),
        steps: StepCsv::create(&dir.join("steps.csv"), &labels, config.deterministic)?,
        mesh,
        materials,
        dir,
        vtu_every: if config.output.vtu { config.output.vtu_every } else { 0 },
        error: None,
        extra,
    };
    let workers = config.worker_count()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Input(format!("cannot start {workers} workers: {e}")))?;
    let outcome = pool.install(|| run_load_program(mesh, materials, program, &solver, &mut observer))?;
    let wall = if config.deterministic { 0.0 } else { observer.elapsed() };
    if let Some(e) = observer.error.take() {
        return Err(e);
    }

    let (force, volume) = curves(&labels, &outcome.reports);
    write_curves_csv(&force, &dir.join("force_displacement.csv"))?;
    write_curves_csv(std::slice::from_ref(&volume), &dir.join("fractured_volume.csv"))?;
    if config.output.vtu {
        write_vtu(mesh, &outcome.state, materials, &dir.join("final.vtu"))?;
    }

    let converged: Vec<&StepReport> = outcome.reports.iter().filter(|r| r.converged).collect();
    let peak = converged
        .iter()
        .filter(|r| !r.reactions.is_empty())
        .fold(None::<&StepReport>, |best, r| match best {
            Some(b) if b.reactions[0].abs() >= r.reactions[0].abs() => Some(b),
            _ => Some(r),
        });
    let (termination, termination_step, failure) = match &outcome.termination {
        Termination::Completed => ("completed", None, None),
        Termination::FullyFractured { step } => ("fully_fractured", Some(*step), None),
        Termination::Failed { step, reason } => ("failed", Some(*step), Some(reason.clone())),
    };
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        scenario: scenario_name(config.scenario()).to_string(),
        scheme: format!("{:?}", solver.scheme).to_lowercase(),
        termination: termination.to_string(),
        termination_step,
        failure,
        n_steps: program.n_steps,
        converged_steps: converged.len(),
        fallback_steps: converged.iter().filter(|r| r.fallback).count(),
        nodes: mesh.node_count(),
        tets: mesh.tet_count(),
        dofs: 3 * mesh.node_count(),
        peak_load: peak.map_or(0.0, |r| r.reactions[0]),
        peak_step: peak.map_or(0, |r| r.step),
        peak_probe: peak.map_or(0.0, |r| r.probe),
        total_fractured_volume: converged.last().map_or(0.0, |r| r.fractured_volume),
        wall_time: wall,
    };
    write_json(&summary, &dir.join("summary.json"))?;
    Ok(RunResult { summary, outcome })
}

fn failure(result: &RunResult) -> Option<CliError> {
    match &result.outcome.termination {
        Termination::Failed { step, reason } => Some(CliError::StepFailed {
            step: *step,
            reason: reason.clone(),
        }),
        _ => None,
    }
}

/// `pfrac run -c <config>`.
pub fn cmd_run(config_path: &Path, out: &mut dyn Write) -> Result<RunSummary, CliError> {
    let config = RunConfig::load(config_path)?;
    let problem = config.scenario().build(config.seed)?;
    let result = run_problem(&problem, &config, &config.output.directory, &mut NullObserver)?;
    let s = &result.summary;
    let _ = writeln!(
        out,
        "{} steps ({}), peak load {} N at step {}, fractured volume {} mm^3",
        s.converged_steps, s.termination, s.peak_load, s.peak_step, s.total_fractured_volume
    );
    let _ = writeln!(out, "outputs in {}", config.output.directory.display());
    match failure(&result) {
        Some(e) => Err(e),
        None => Ok(result.summary),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub schema_version: u32,
    pub refinements: Vec<usize>,
    pub dofs: Vec<usize>,
    /// Peak reaction magnitude per refinement (N).
    pub peaks: Vec<f64>,
    /// Relative error against the finest refinement (percent).
    pub errors_percent: Vec<f64>,
    pub threshold_percent: f64,
    /// First refinement whose error is under the threshold.
    pub first_converged: Option<usize>,
    pub monotone_decreasing: bool,
}

/// Runs the configured scenario at each refinement into
/// `<output>/refine_<n>` and writes the study to `convergence.csv` and
/// `convergence.json`. The quantity is the peak reaction magnitude.
pub fn convergence_study(
    config: &RunConfig,
    refinements: &[usize],
    out: &mut dyn Write,
    extra: &mut (dyn StepObserver + Send),
) -> Result<(ConvergenceSummary, Vec<RunResult>), CliError> {
    if refinements.len() < 2 {
        return Err(CliError::Input(format!(
            "a convergence study needs at least two refinements, got {}",
            refinements.len()
        )));
    }
    let base = config.output.directory.clone();
    let mut runs = Vec::new();
    for &n in refinements {
        let scenario = config.scenario().refined(n)?;
        let problem = scenario.build(config.seed)?;
        let mut c = config.clone();
        c.scenario = Some(scenario);
        let result = run_problem(&problem, &c, &base.join(format!("refine_{n}")), extra)?;
        if let Some(e) = failure(&result) {
            return Err(e);
        }
        let _ = writeln!(out, "refinement {n}: {} dofs, peak {} N", result.summary.dofs, result.summary.peak_load);
        runs.push(result);
    }
    let dofs: Vec<usize> = runs.iter().map(|r| r.summary.dofs).collect();
    let peaks: Vec<f64> = runs.iter().map(|r| r.summary.peak_load.abs()).collect();
    let curve = relative_error_curve(&dofs, &peaks).map_err(|e| CliError::Input(e.to_string()))?;
    write_curves_csv(std::slice::from_ref(&curve.series), &base.join("convergence.csv"))?;
    let errors = curve.series.ordinate.clone();
    let summary = ConvergenceSummary {
        schema_version: SCHEMA_VERSION,
        refinements: refinements.to_vec(),
        dofs,
        peaks,
        monotone_decreasing: errors.windows(2).all(|w| w[1] < w[0]),
        errors_percent: errors,
        threshold_percent: CONVERGENCE_PERCENT,
        first_converged: curve.first_converged.map(|i| refinements[i]),
    };
    write_json(&summary, &base.join("convergence.json"))?;
    for (n, e) in refinements.iter().zip(&summary.errors_percent) {
        let flag = if summary.first_converged == Some(*n) { "  <- first under 5%" } else { "" };
        let _ = writeln!(out, "{n:>8} {e:>12.6}%{flag}");
    }
    Ok((summary, runs))
}

/// `pfrac convergence -c <config> -r n1,n2,...`.
pub fn cmd_convergence(config_path: &Path, refinements: &[usize], out: &mut dyn Write) -> Result<ConvergenceSummary, CliError> {
    if refinements.len() < 2 {
        return Err(CliError::Input(format!(
            "a convergence study needs at least two refinements, got {}",
            refinements.len()
        )));
    }
    let config = RunConfig::load(config_path)?;
    Ok(convergence_study(&config, refinements, out, &mut NullObserver)?.0)
}

/// `pfrac calibrate`: `(Gc, l)` for a modulus and failure stress.
pub fn cmd_calibrate(e: f64, sigma_max: f64, e0: f64, gc0: f64, beta: f64, out: &mut dyn Write) -> Result<(f64, f64), CliError> {
    let input = |err: pfrac_core::materials::MaterialError| CliError::Input(err.to_string());
    let gc = gc_power_law(e, e0, gc0, beta).map_err(input)?;
    let l = length_scale(e, gc, sigma_max).map_err(input)?;
    let _ = writeln!(out, "Gc = {gc}");
    let _ = writeln!(out, "l = {l}");
    Ok((gc, l))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshInfo {
    pub nodes: usize,
    pub tets: usize,
    pub facets: usize,
    pub volume: f64,
    /// Region tag to tetrahedron count.
    pub regions: BTreeMap<i32, usize>,
    /// Surface tag to facet count.
    pub surfaces: BTreeMap<i32, usize>,
}

pub fn mesh_info(mesh: &Mesh) -> MeshInfo {
    let mut regions = BTreeMap::new();
    for &r in mesh.region_tags() {
        *regions.entry(r).or_insert(0) += 1;
    }
    let mut surfaces = BTreeMap::new();
    for f in mesh.facets() {
        *surfaces.entry(f.tag).or_insert(0) += 1;
    }
    MeshInfo {
        nodes: mesh.node_count(),
        tets: mesh.tet_count(),
        facets: mesh.facets().len(),
        volume: mesh.total_volume(),
        regions,
        surfaces,
    }
}

/// `pfrac mesh-info <path>`.
pub fn cmd_mesh_info(path: &Path, out: &mut dyn Write) -> Result<MeshInfo, CliError> {
    let file = std::fs::File::open(path).map_err(|e| OutputError::new(path, e))?;
    let mesh = parse_msh(std::io::BufReader::new(file)).map_err(|source| CliError::Mesh {
        path: path.display().to_string(),
        source,
    })?;
    let info = mesh_info(&mesh);
    let _ = writeln!(out, "nodes: {}", info.nodes);
    let _ = writeln!(out, "tetrahedra: {}", info.tets);
    let _ = writeln!(out, "boundary facets: {}", info.facets);
    let _ = writeln!(out, "volume: {} mm^3", info.volume);
    for (tag, n) in &info.regions {
        let _ = writeln!(out, "region {tag}: {n} tetrahedra");
    }
    for (tag, n) in &info.surfaces {
        let _ = writeln!(out, "surface {tag}: {n} facets");
    }
    Ok(info)
}
