//! Nonlinear drivers: Newton on the displacement at frozen phase field, the
//! staggered alternate-minimization step, the monolithic Newton step and
//! the load-program loop.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use thiserror::Error;

use crate::assembly::{AssemblyError, Assembler, BoundaryConditions, FieldState};
use crate::linsolve::{norm2, solve_linear, LinearSolveError, LinearSolver};
use crate::materials::MaterialField;
use crate::mesh::{Mesh, MeshError};
use crate::postprocess::{fractured_volume, nodal_residual, total_reaction, DEFAULT_FRACTURE_THRESHOLD};
use crate::scenarios::{LoadProgram, ScenarioError};
use crate::sparse::{Constraints, SparseError};

/// Floor on the denominators of relative changes.
pub const RELATIVE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Linear(#[from] LinearSolveError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Staggered,
    Monolithic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub staggered_tol: f64,
    pub newton_tol: f64,
    pub max_staggered_iters: usize,
    pub max_newton_iters: usize,
    /// Used for the displacement and phase solves of the staggered scheme.
    /// The coupled tangent is unsymmetric and always solved directly.
    pub linear_solver: LinearSolver,
    pub scheme: Scheme,
    /// Keep `H = 0` in screw elements.
    pub clamp_screw_history: bool,
    /// Retry a failed monolithic step with the staggered scheme.
    pub monolithic_fallback: bool,
    pub fracture_threshold: f64,
    /// Stop once the fractured volume stalls and the first monitored
    /// reaction drops below 1% of its peak.
    pub halt_on_full_fracture: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            staggered_tol: 1e-4,
            newton_tol: 1e-6,
            max_staggered_iters: 200,
            max_newton_iters: 25,
            linear_solver: LinearSolver::Direct,
            scheme: Scheme::Staggered,
            clamp_screw_history: true,
            monolithic_fallback: false,
            fracture_threshold: DEFAULT_FRACTURE_THRESHOLD,
            halt_on_full_fracture: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.staggered_tol > 0.0) || !(self.newton_tol > 0.0) {
            return Err(SolverError::InvalidConfig("tolerances must be positive"));
        }
        if self.max_staggered_iters == 0 || self.max_newton_iters == 0 {
            return Err(SolverError::InvalidConfig("iteration caps must be at least 1"));
        }
        if !(self.fracture_threshold > 0.0 && self.fracture_threshold < 1.0) {
            return Err(SolverError::InvalidConfig("fracture threshold must lie in (0, 1)"));
        }
        if let LinearSolver::Cg { rel_tol, max_iters } = self.linear_solver {
            if !(rel_tol > 0.0) || max_iters == 0 {
                return Err(SolverError::InvalidConfig("CG tolerance and iteration cap"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub converged: bool,
    /// Number of linear corrections.
    pub iterations: usize,
    /// Free-dof residual norm before each correction and at exit.
    pub residual_norms: Vec<f64>,
}

fn free_norm(r: &[f64], mask: &[bool]) -> f64 {
    libm::sqrt(r.iter().zip(mask).filter(|(_, &m)| !m).map(|(v, _)| v * v).sum())
}

fn prescribe(x: &mut [f64], c: &Constraints) {
    for &(d, v) in c.pairs() {
        x[d] = v;
    }
}

fn off_prescribed(x: &[f64], c: &Constraints) -> bool {
    c.pairs().iter().any(|&(d, v)| x[d] != v)
}

const LINE_SEARCH_CUTS: usize = 8;
const ARMIJO: f64 = 1e-4;

/// Backtracking along a Newton direction on the free-residual norm. The
/// split law is only piecewise linear, and full steps can cycle between
/// branch patterns. `apply(alpha)` moves the iterate and returns the new
/// norm; the last trial is kept if no cut satisfies the decrease test.
fn line_search(r: f64, mut apply: impl FnMut(f64) -> Result<f64, SolverError>) -> Result<f64, SolverError> {
    let mut alpha = 1.0;
    for _ in 0..LINE_SEARCH_CUTS {
        let trial = apply(alpha)?;
        if trial <= (1.0 - ARMIJO * alpha) * r {
            return Ok(alpha);
        }
        alpha *= 0.5;
    }
    Ok(alpha * 2.0)
}

/// `||a - b|| / max(||a||, floor)`
pub fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    let diff = libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
    diff / norm2(a).max(RELATIVE_FLOOR)
}

/// Newton iterations on the displacement at the frozen phase field of
/// `state`, until `||R_free|| <= newton_tol (1 + ||R_free,0||)`.
pub fn newton_displacement(
    asm: &Assembler,
    state: &mut FieldState,
    bcs: &BoundaryConditions,
    config: &SolverConfig,
) -> Result<NewtonOutcome, SolverError> {
    let mask = bcs.displacement.mask(state.u.len());
    let mut norms = Vec::new();
    let mut r0 = None;
    for it in 0..=config.max_newton_iters {
        let mut residual = asm.internal_forces(state)?;
        for (ri, f) in residual.iter_mut().zip(&bcs.forces) {
            *ri -= f;
        }
        let r = free_norm(&residual, &mask);
        norms.push(r);
        if !r.is_finite() {
            break;
        }
        let r0 = *r0.get_or_insert(r);
        if !off_prescribed(&state.u, &bcs.displacement) && r <= config.newton_tol * (1.0 + r0) {
            return Ok(NewtonOutcome {
                converged: true,
                iterations: it,
                residual_norms: norms,
            });
        }
        if it == config.max_newton_iters {
            break;
        }
        let sys = asm.assemble_displacement(state, bcs)?;
        let du = solve_linear(&sys.correction, &config.linear_solver)?;
        if off_prescribed(&state.u, &bcs.displacement) {
            for (u, d) in state.u.iter_mut().zip(&du) {
                *u += d;
            }
        } else {
            let base = state.u.clone();
            line_search(r, |alpha| {
                for ((u, b), d) in state.u.iter_mut().zip(&base).zip(&du) {
                    *u = b + alpha * d;
                }
                let mut res = asm.internal_forces(state)?;
                for (ri, f) in res.iter_mut().zip(&bcs.forces) {
                    *ri -= f;
                }
                Ok(free_norm(&res, &mask))
            })?;
        }
        prescribe(&mut state.u, &bcs.displacement);
    }
    Ok(NewtonOutcome {
        converged: false,
        iterations: norms.len() - 1,
        residual_norms: norms,
    })
}

/// Result of one load increment.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub converged: bool,
    pub staggered_iterations: usize,
    pub newton_iterations: usize,
    /// Free displacement-residual norm at exit.
    pub residual_norm: f64,
    /// Last staggered relative change, or the last coupled residual norm.
    pub relative_change: f64,
    /// Phase field the final displacement is in equilibrium with.
    pub s_equilibrium: Vec<f64>,
    pub halved: bool,
    pub fallback: bool,
    pub message: Option<String>,
}

impl StepOutcome {
    fn failed(message: String, state: &FieldState) -> Self {
        Self {
            converged: false,
            staggered_iterations: 0,
            newton_iterations: 0,
            residual_norm: f64::NAN,
            relative_change: f64::NAN,
            s_equilibrium: state.s.clone(),
            halved: false,
            fallback: false,
            message: Some(message),
        }
    }
}

/// Alternate displacement solve, history update and phase solve until the
/// larger relative change of `u` and `s` drops below `staggered_tol`.
pub fn staggered_step(
    asm: &Assembler,
    state: &mut FieldState,
    bcs: &BoundaryConditions,
    config: &SolverConfig,
) -> Result<StepOutcome, SolverError> {
    let h_base = state.h.clone();
    let mut u_old = state.u.clone();
    let mut newton_total = 0;
    let mut change = f64::INFINITY;
    let mut residual = f64::NAN;
    for k in 1..=config.max_staggered_iters {
        let newton = newton_displacement(asm, state, bcs, config)?;
        newton_total += newton.iterations;
        residual = *newton.residual_norms.last().unwrap_or(&f64::NAN);
        if !newton.converged {
            let mut out = StepOutcome::failed(
                alloc::format!("displacement Newton did not converge in staggered iteration {k} (residual {residual:e})"),
                state,
            );
            out.staggered_iterations = k;
            out.newton_iterations = newton_total;
            return Ok(out);
        }
        let h = asm.history_from_strain(&state.u, &h_base);
        let sys = asm.assemble_phase(&h, &bcs.phase)?;
        let s_new = solve_linear(&sys, &config.linear_solver)?;
        change = relative_change(&state.u, &u_old).max(relative_change(&s_new, &state.s));
        let s_eq = core::mem::replace(&mut state.s, s_new);
        state.h = h;
        if change < config.staggered_tol {
            return Ok(StepOutcome {
                converged: true,
                staggered_iterations: k,
                newton_iterations: newton_total,
                residual_norm: residual,
                relative_change: change,
                s_equilibrium: s_eq,
                halved: false,
                fallback: false,
                message: None,
            });
        }
        u_old.copy_from_slice(&state.u);
    }
    let mut out = StepOutcome::failed(
        alloc::format!("staggered iteration cap reached (last relative change {change:e})"),
        state,
    );
    out.staggered_iterations = config.max_staggered_iters;
    out.newton_iterations = newton_total;
    out.residual_norm = residual;
    out.relative_change = change;
    Ok(out)
}

/// Newton on the coupled `(u, s)` residual with the history refreshed from
/// the current strain before every assembly.
pub fn monolithic_step(
    asm: &mut Assembler,
    state: &mut FieldState,
    bcs: &BoundaryConditions,
    config: &SolverConfig,
) -> Result<StepOutcome, SolverError> {
    let n = asm.n_nodes();
    let h_base = state.h.clone();
    let phase = bcs.phase.offset(3 * n);
    let all = bcs.displacement.merged(&phase)?;
    let mask = all.mask(4 * n);
    let mut r0 = None;
    let mut last = f64::NAN;
    for it in 0..=config.max_newton_iters {
        let sys = asm.assemble_monolithic(state, bcs, &h_base)?;
        let r = free_norm(&sys.residual, &mask);
        last = r;
        if !r.is_finite() {
            break;
        }
        let r0 = *r0.get_or_insert(r);
        let on_bcs = !off_prescribed(&state.u, &bcs.displacement) && !bcs.phase.pairs().iter().any(|&(d, v)| state.s[d] != v);
        if on_bcs && r <= config.newton_tol * (1.0 + r0) {
            state.h = sys.history;
            return Ok(StepOutcome {
                converged: true,
                staggered_iterations: 0,
                newton_iterations: it,
                residual_norm: free_norm(&sys.residual[..3 * n], &mask[..3 * n]),
                relative_change: r,
                s_equilibrium: state.s.clone(),
                halved: false,
                fallback: false,
                message: None,
            });
        }
        if it == config.max_newton_iters {
            break;
        }
        let dx = match solve_linear(&sys.correction, &LinearSolver::Direct) {
            Ok(dx) => dx,
            Err(LinearSolveError::Singular { .. }) => break,
            Err(e) => return Err(e.into()),
        };
        for (u, d) in state.u.iter_mut().zip(&dx[..3 * n]) {
            *u += d;
        }
        for (s, d) in state.s.iter_mut().zip(&dx[3 * n..]) {
            *s += d;
        }
        prescribe(&mut state.u, &bcs.displacement);
        prescribe(&mut state.s, &bcs.phase);
    }
    let mut out = StepOutcome::failed(alloc::format!("monolithic Newton did not converge (residual {last:e})"), state);
    out.newton_iterations = config.max_newton_iters;
    out.relative_change = last;
    Ok(out)
}

/// Per-step record of a load program.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub load_factor: f64,
    /// Probe displacement (mm).
    pub probe: f64,
    /// One signed reaction per monitor (N).
    pub reactions: Vec<f64>,
    /// Residual summed over all constrained dofs (N).
    pub reaction_total: [f64; 3],
    /// Sum of the applied nodal forces (N).
    pub applied_total: [f64; 3],
    /// `|reaction_total + applied_total|` relative to the larger of the
    /// applied load and the summed reaction magnitudes.
    pub equilibrium_error: f64,
    pub fractured_volume: f64,
    pub staggered_iterations: usize,
    pub newton_iterations: usize,
    pub residual_norm: f64,
    pub relative_change: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub halved: bool,
    pub fallback: bool,
    pub converged: bool,
    /// Seconds, from the observer clock.
    pub wall_time: f64,
}

/// Receives each step as it completes, and supplies wall-clock time.
pub trait StepObserver {
    fn on_step(&mut self, _report: &StepReport, _state: &FieldState) {}

    /// Seconds since an arbitrary origin.
    fn elapsed(&self) -> f64 {
        0.0
    }
}

pub struct NullObserver;

impl StepObserver for NullObserver {}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Completed,
    FullyFractured { step: usize },
    Failed { step: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramOutcome {
    pub reports: Vec<StepReport>,
    /// Last converged state.
    pub state: FieldState,
    pub termination: Termination,
}

fn solve_increment(
    asm: &mut Assembler,
    state: &mut FieldState,
    program: &LoadProgram,
    t0: f64,
    t1: f64,
    config: &SolverConfig,
) -> Result<(StepOutcome, BoundaryConditions), SolverError> {
    let n = asm.n_nodes();
    let bcs = program.loads_at(n, t1)?;
    match config.scheme {
        Scheme::Staggered => Ok((staggered_step(asm, state, &bcs, config)?, bcs)),
        Scheme::Monolithic => {
            let backup = state.clone();
            let first = monolithic_step(asm, state, &bcs, config)?;
            if first.converged {
                return Ok((first, bcs));
            }
            *state = backup.clone();
            let mut iterations = first.newton_iterations;
            let mut last = first;
            for t in [0.5 * (t0 + t1), t1] {
                let b = program.loads_at(n, t)?;
                last = monolithic_step(asm, state, &b, config)?;
                iterations += last.newton_iterations;
                if !last.converged {
                    break;
                }
            }
            last.halved = true;
            last.newton_iterations = iterations;
            if last.converged {
                return Ok((last, bcs));
            }
            if config.monolithic_fallback {
                *state = backup;
                let mut fb = staggered_step(asm, state, &bcs, config)?;
                fb.halved = true;
                fb.fallback = true;
                fb.newton_iterations += iterations;
                return Ok((fb, bcs));
            }
            Ok((last, bcs))
        }
    }
}

fn equilibrium_error(reaction: &[f64; 3], applied: &[f64; 3], residual: &[f64], bcs: &BoundaryConditions) -> f64 {
    let mut magnitude = [0.0; 3];
    for &(d, _) in bcs.displacement.pairs() {
        magnitude[d % 3] += libm::fabs(residual[d]);
    }
    let scale = norm2(applied).max(norm2(&magnitude));
    let gap = [reaction[0] + applied[0], reaction[1] + applied[1], reaction[2] + applied[2]];
    if scale == 0.0 {
        norm2(&gap)
    } else {
        norm2(&gap) / scale
    }
}

/// Runs every step of `program` from the undamaged, unloaded state.
pub fn run_load_program(
    mesh: &Mesh,
    materials: &MaterialField,
    program: &LoadProgram,
    config: &SolverConfig,
    observer: &mut dyn StepObserver,
) -> Result<ProgramOutcome, SolverError> {
    config.validate()?;
    program.validate(mesh.node_count())?;
    let mut asm = Assembler::new(mesh, materials)?.with_screw_history_clamp(config.clamp_screw_history);
    let mut state = FieldState::zeros(mesh);
    let mut reports: Vec<StepReport> = Vec::with_capacity(program.n_steps);
    let monitor_dofs: Vec<Vec<(usize, f64)>> = program.monitors.iter().map(|m| program.monitor_dofs(m)).collect();
    let mut peak_reaction: f64 = 0.0;
    for step in 1..=program.n_steps {
        let start = observer.elapsed();
        let backup = state.clone();
        let t1 = step as f64;
        let (outcome, bcs) = solve_increment(&mut asm, &mut state, program, t1 - 1.0, t1, config)?;
        if !outcome.converged {
            state = backup;
        }
        let eq_state = FieldState {
            u: state.u.clone(),
            s: if outcome.converged { outcome.s_equilibrium.clone() } else { state.s.clone() },
            h: state.h.clone(),
        };
        let residual = nodal_residual(&asm, &eq_state, &bcs)?;
        let reactions: Vec<f64> = monitor_dofs
            .iter()
            .map(|dofs| dofs.iter().map(|&(d, w)| residual[d] * w).sum())
            .collect();
        let reaction_total = total_reaction(&residual, &bcs);
        let applied_total = program.total_applied(t1);
        let report = StepReport {
            step,
            load_factor: t1,
            probe: program.probe.measure(&state.u),
            reactions,
            reaction_total,
            applied_total,
            equilibrium_error: equilibrium_error(&reaction_total, &applied_total, &residual, &bcs),
            fractured_volume: fractured_volume(mesh, &state.s, config.fracture_threshold)?,
            staggered_iterations: outcome.staggered_iterations,
            newton_iterations: outcome.newton_iterations,
            residual_norm: outcome.residual_norm,
            relative_change: outcome.relative_change,
            s_min: state.s.iter().copied().fold(f64::INFINITY, f64::min),
            s_max: state.s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            halved: outcome.halved,
            fallback: outcome.fallback,
            converged: outcome.converged,
            wall_time: observer.elapsed() - start,
        };
        observer.on_step(&report, &state);
        let converged = report.converged;
        let first_reaction = report.reactions.first().copied();
        let volume = report.fractured_volume;
        let previous_volume = reports.last().map(|r| r.fractured_volume);
        reports.push(report);
        if !converged {
            let reason = outcome.message.unwrap_or_else(|| "step did not converge".to_string());
            return Ok(ProgramOutcome {
                reports,
                state,
                termination: Termination::Failed { step, reason },
            });
        }
        if let Some(r) = first_reaction {
            peak_reaction = peak_reaction.max(libm::fabs(r));
            let plateau = previous_volume.is_some_and(|v| volume > 0.0 && libm::fabs(volume - v) <= 1e-12 * volume);
            if config.halt_on_full_fracture && plateau && libm::fabs(r) < 0.01 * peak_reaction {
                return Ok(ProgramOutcome {
                    reports,
                    state,
                    termination: Termination::FullyFractured { step },
                });
            }
        }
    }
    Ok(ProgramOutcome {
        reports,
        state,
        termination: Termination::Completed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_box_tet_mesh;
    use crate::sparse::Constraints;

    fn block() -> (Mesh, MaterialField) {
        let mesh = generate_box_tet_mesh([1.0; 3], [2, 2, 2]).unwrap();
        let mat = MaterialField::homogeneous(mesh.tet_count(), 1000.0, 0.3, 1.0, 0.2, 1e-8).unwrap();
        (mesh, mat)
    }

    /// Boundary nodes follow `u = a x`; the interior is free.
    fn dilation(mesh: &Mesh, a: f64) -> BoundaryConditions {
        let mut pairs = Vec::new();
        for n in mesh.facets().iter().flat_map(|f| f.nodes) {
            for k in 0..3 {
                pairs.push((3 * n + k, a * mesh.nodes()[n][k]));
            }
        }
        let mut bcs = BoundaryConditions::free(mesh);
        bcs.displacement = Constraints::from_pairs(pairs).unwrap();
        bcs
    }

    #[test]
    fn zero_load_needs_no_correction() {
        let (mesh, mat) = block();
        let asm = Assembler::new(&mesh, &mat).unwrap();
        let mut state = FieldState::zeros(&mesh);
        let out = newton_displacement(&asm, &mut state, &dilation(&mesh, 0.0), &SolverConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn single_branch_problem_converges_in_one_correction() {
        let (mesh, mat) = block();
        let asm = Assembler::new(&mesh, &mat).unwrap();
        for stretch in [1e-3, -1e-3] {
            let mut state = FieldState::zeros(&mesh);
            let out = newton_displacement(&asm, &mut state, &dilation(&mesh, stretch), &SolverConfig::default()).unwrap();
            assert!(out.converged);
            assert_eq!(out.iterations, 1, "{out:?}");
        }
    }

    #[test]
    fn staggered_fixed_point_is_stationary() {
        let (mesh, mat) = block();
        let asm = Assembler::new(&mesh, &mat).unwrap();
        let config = SolverConfig {
            staggered_tol: 1e-14,
            newton_tol: 1e-14,
            ..SolverConfig::default()
        };
        let bcs = dilation(&mesh, 0.02);
        let mut state = FieldState::zeros(&mesh);
        assert!(staggered_step(&asm, &mut state, &bcs, &config).unwrap().converged);
        let before = state.clone();
        let again = staggered_step(&asm, &mut state, &bcs, &SolverConfig::default()).unwrap();
        assert!(again.converged);
        assert_eq!(again.staggered_iterations, 1);
        assert!(relative_change(&before.u, &state.u) < 1e-12);
        assert!(relative_change(&before.s, &state.s) < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            max_newton_iters: 0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
