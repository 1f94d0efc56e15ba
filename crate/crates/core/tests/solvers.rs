use pfrac_core::assembly::{Assembler, FieldState};
use pfrac_core::linsolve::norm2;
use pfrac_core::scenarios::{build_sent, LoadProgram, SentMode, SentSpec};
use pfrac_core::solvers::*;

struct Recorder {
    states: Vec<FieldState>,
}

impl StepObserver for Recorder {
    fn on_step(&mut self, _report: &StepReport, state: &FieldState) {
        self.states.push(state.clone());
    }
}

fn sent(divisions: usize, n_steps: usize) -> (pfrac_core::mesh::Mesh, pfrac_core::materials::MaterialField, LoadProgram) {
    let mut spec = SentSpec::new(SentMode::Tension);
    spec.divisions = divisions;
    spec.n_steps = n_steps;
    spec.max_displacement = 0.01 * n_steps as f64 / 40.0;
    build_sent(&spec).unwrap()
}

fn tight() -> SolverConfig {
    SolverConfig {
        staggered_tol: 1e-8,
        newton_tol: 1e-10,
        ..SolverConfig::default()
    }
}

#[test]
fn elastic_regime_is_linear_and_undamaged() {
    let (mesh, mat, program) = sent(10, 3);
    let out = run_load_program(&mesh, &mat, &program, &SolverConfig::default(), &mut NullObserver).unwrap();
    assert_eq!(out.termination, Termination::Completed);
    let slope = out.reports[0].reactions[0] / out.reports[0].probe;
    for r in &out.reports {
        assert!(r.s_max < 0.05, "s_max {}", r.s_max);
        let k = r.reactions[0] / r.probe;
        assert!((k - slope).abs() <= 0.01 * slope.abs(), "step {}: {k} vs {slope}", r.step);
    }
}

#[test]
fn monolithic_matches_staggered_in_the_elastic_regime() {
    let (mesh, mat, program) = sent(10, 3);
    let mut a = Recorder { states: vec![] };
    let mut b = Recorder { states: vec![] };
    run_load_program(&mesh, &mat, &program, &tight(), &mut a).unwrap();
    let mono = SolverConfig {
        scheme: Scheme::Monolithic,
        ..tight()
    };
    run_load_program(&mesh, &mat, &program, &mono, &mut b).unwrap();
    for (x, y) in a.states.iter().zip(&b.states) {
        let diff: Vec<f64> = x.u.iter().zip(&y.u).map(|(p, q)| p - q).collect();
        assert!(norm2(&diff) <= 1e-6 * norm2(&x.u));
    }
}

#[test]
fn monolithic_needs_at_most_two_iterations_from_a_staggered_solution() {
    let (mesh, mat, program) = sent(10, 4);
    let config = tight();
    let mut asm = Assembler::new(&mesh, &mat).unwrap();
    let mut state = FieldState::zeros(&mesh);
    let bcs = program.loads_at(mesh.node_count(), 4.0).unwrap();
    let first = staggered_step(&asm, &mut state, &bcs, &config).unwrap();
    assert!(first.converged);
    // restart from the converged fields with the history they started from
    let mut restart = FieldState {
        h: vec![0.0; mesh.tet_count()],
        ..state.clone()
    };
    let out = monolithic_step(&mut asm, &mut restart, &bcs, &config).unwrap();
    assert!(out.converged);
    assert!(out.newton_iterations <= 2, "{} iterations", out.newton_iterations);

    // the staggered fixed point nearly zeroes the coupled residual
    let sys = asm.assemble_monolithic(&state, &bcs, &vec![0.0; mesh.tet_count()]).unwrap();
    let mask = bcs.displacement.mask(3 * mesh.node_count());
    let free: Vec<f64> = sys.residual[..3 * mesh.node_count()].iter().zip(&mask).map(|(r, &m)| if m { 0.0 } else { *r }).collect();
    let scale = norm2(&asm.internal_forces(&state).unwrap());
    assert!(norm2(&free) <= 10.0 * config.staggered_tol * scale);
}

#[test]
fn converged_state_is_a_fixed_point() {
    let (mesh, mat, program) = sent(10, 4);
    let config = tight();
    let asm = Assembler::new(&mesh, &mat).unwrap();
    let mut state = FieldState::zeros(&mesh);
    let bcs = program.loads_at(mesh.node_count(), 2.0).unwrap();
    assert!(staggered_step(&asm, &mut state, &bcs, &config).unwrap().converged);
    let before = state.clone();
    let again = staggered_step(&asm, &mut state, &bcs, &config).unwrap();
    assert!(again.converged);
    assert_eq!(again.staggered_iterations, 1);
    let du: Vec<f64> = state.u.iter().zip(&before.u).map(|(a, b)| a - b).collect();
    assert!(norm2(&du) <= 1e-12 * norm2(&before.u).max(1.0));
    let ds: Vec<f64> = state.s.iter().zip(&before.s).map(|(a, b)| a - b).collect();
    assert!(norm2(&ds) <= 1e-12);
}

#[test]
fn zero_load_program_stays_at_rest() {
    let (mesh, mat, mut program) = sent(6, 5);
    program.n_steps = 5;
    for set in program.dirichlet.iter_mut() {
        for r in set.components.iter_mut().flatten() {
            r.per_step = 0.0;
        }
    }
    let out = run_load_program(&mesh, &mat, &program, &SolverConfig::default(), &mut NullObserver).unwrap();
    assert_eq!(out.reports.len(), 5);
    for r in &out.reports {
        assert_eq!(r.reactions[0], 0.0);
        assert_eq!(r.fractured_volume, 0.0);
        assert_eq!(r.staggered_iterations, 1);
    }
}

#[test]
fn history_and_fractured_volume_never_decrease() {
    let (mesh, mat, program) = sent(10, 40);
    let mut rec = Recorder { states: vec![] };
    let out = run_load_program(&mesh, &mat, &program, &SolverConfig::default(), &mut rec).unwrap();
    assert!(matches!(out.termination, Termination::Completed | Termination::FullyFractured { .. }), "{:?}", out.termination);
    assert!(out.reports.last().unwrap().fractured_volume > 0.0);
    for w in rec.states.windows(2) {
        assert!(w[0].h.iter().zip(&w[1].h).all(|(a, b)| b >= a));
    }
    for w in out.reports.windows(2) {
        assert!(w[1].fractured_volume >= w[0].fractured_volume);
    }
    for r in &out.reports {
        assert!(r.s_min >= -1e-6 && r.s_max <= 1.0 + 1e-6, "step {}", r.step);
        assert!(r.staggered_iterations <= SolverConfig::default().max_staggered_iters);
    }
}

#[test]
fn unloading_and_reloading_restores_the_state() {
    let (mesh, mat, program) = sent(10, 40);
    let config = tight();
    let asm = Assembler::new(&mesh, &mat).unwrap();
    let n = mesh.node_count();
    let mut state = FieldState::zeros(&mesh);
    for t in [4.0, 8.0] {
        assert!(staggered_step(&asm, &mut state, &program.loads_at(n, t).unwrap(), &config).unwrap().converged);
    }
    let loaded = state.clone();
    for t in [4.0, 0.0, 4.0, 8.0] {
        let s_prev = state.s.clone();
        assert!(staggered_step(&asm, &mut state, &program.loads_at(n, t).unwrap(), &config).unwrap().converged);
        assert!(state.s.iter().zip(&s_prev).all(|(a, b)| *a >= b - 1e-12));
    }
    // H is unchanged by the excursion, so the reloaded state is the same
    let h_max = loaded.h.iter().cloned().fold(0.0, f64::max);
    assert!(state.h.iter().zip(&loaded.h).all(|(a, b)| (a - b).abs() <= 1e-9 * h_max));
    let du: Vec<f64> = state.u.iter().zip(&loaded.u).map(|(a, b)| a - b).collect();
    let ds: Vec<f64> = state.s.iter().zip(&loaded.s).map(|(a, b)| a - b).collect();
    assert!(norm2(&du) <= 1e-8 * norm2(&loaded.u));
    assert!(norm2(&ds) <= 1e-8);
}

#[test]
fn newton_residuals_decrease_on_a_sent_step() {
    let (mesh, mat, program) = sent(10, 40);
    let asm = Assembler::new(&mesh, &mat).unwrap();
    let mut state = FieldState::zeros(&mesh);
    let config = tight();
    // move once onto the boundary data, then monitor a fresh solve
    let bcs = program.loads_at(mesh.node_count(), 10.0).unwrap();
    let first = newton_displacement(&asm, &mut state, &bcs, &config).unwrap();
    assert!(first.converged);
    let h = asm.history_from_strain(&state.u, &state.h);
    state.s = pfrac_core::linsolve::solve_linear(&asm.assemble_phase(&h, &bcs.phase).unwrap(), &config.linear_solver).unwrap();
    let out = newton_displacement(&asm, &mut state, &bcs, &config).unwrap();
    assert!(out.converged);
    assert!(out.residual_norms.len() >= 2);
    for w in out.residual_norms.windows(2) {
        assert!(w[1] < w[0], "{:?}", out.residual_norms);
    }
}

#[test]
fn failed_step_is_reported_and_rolled_back() {
    let (mesh, mat, program) = sent(6, 40);
    let config = SolverConfig {
        max_staggered_iters: 1,
        staggered_tol: 1e-14,
        ..SolverConfig::default()
    };
    let out = run_load_program(&mesh, &mat, &program, &config, &mut NullObserver).unwrap();
    let Termination::Failed { step, reason } = &out.termination else {
        panic!("expected a failure, got {:?}", out.termination);
    };
    assert_eq!(*step, 1);
    assert!(reason.contains("cap"));
    assert!(!out.reports[0].converged);
    assert!(out.state.u.iter().all(|&u| u == 0.0));
}

#[test]
fn equilibrium_holds_at_every_converged_step() {
    let (mesh, mat, program) = sent(10, 40);
    let config = SolverConfig {
        newton_tol: 1e-10,
        ..SolverConfig::default()
    };
    let out = run_load_program(&mesh, &mat, &program, &config, &mut NullObserver).unwrap();
    for r in out.reports.iter().filter(|r| r.converged) {
        assert!(r.equilibrium_error <= 1e-8, "step {}: {:e}", r.step, r.equilibrium_error);
    }
}
