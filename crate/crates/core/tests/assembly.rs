use approx::assert_relative_eq;
use pfrac_core::assembly::{Assembler, BoundaryConditions, FieldState};
use pfrac_core::kernels::{energy_split, Mat3};
use pfrac_core::linsolve::{solve_linear, LinearSolver};
use pfrac_core::materials::{lame_constants, MaterialField};
use pfrac_core::mesh::{generate_box_tet_mesh, side, Mesh};
use pfrac_core::postprocess::{nodal_residual, total_reaction};
use pfrac_core::solvers::{newton_displacement, SolverConfig};
use pfrac_core::sparse::Constraints;
use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};

const E: f64 = 1000.0;
const NU: f64 = 0.25;

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn field(mesh: &Mesh, gc: f64, l: f64, k: f64) -> MaterialField {
    MaterialField::homogeneous(mesh.tet_count(), E, NU, gc, l, k).unwrap()
}

/// Box mesh with interior nodes shifted by up to `amount` cell sizes.
fn distorted_box(divisions: usize, amount: f64, seed: u64) -> Mesh {
    let base = generate_box_tet_mesh([1.0; 3], [divisions; 3]).unwrap();
    let h = 1.0 / divisions as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<[f64; 3]> = base
        .nodes()
        .iter()
        .map(|p| {
            let interior = p.iter().all(|&c| c > 1e-9 && c < 1.0 - 1e-9);
            if interior {
                std::array::from_fn(|k| p[k] + amount * h * uniform(&mut rng, -1.0, 1.0))
            } else {
                *p
            }
        })
        .collect();
    Mesh::new(nodes, base.tets().to_vec(), base.facets().to_vec(), base.region_tags().to_vec()).unwrap()
}

fn config() -> SolverConfig {
    SolverConfig {
        newton_tol: 1e-12,
        ..SolverConfig::default()
    }
}

fn dirichlet(pairs: Vec<(usize, f64)>) -> Constraints {
    Constraints::from_pairs(pairs).unwrap()
}

#[test]
fn patch_test_reproduces_a_linear_field() {
    let mesh = distorted_box(3, 0.2, 1);
    let mat = field(&mesh, 1.0, 0.1, 1e-8);
    let asm = Assembler::new(&mesh, &mat).unwrap();
    let a = [[2e-3, 5e-4, -3e-4], [1e-4, -1e-3, 7e-4], [-6e-4, 2e-4, 1.5e-3]];
    let exact = |p: &[f64; 3], i: usize| a[i][0] * p[0] + a[i][1] * p[1] + a[i][2] * p[2];
    let boundary: Vec<usize> = (1..=6).flat_map(|t| mesh.nodes_with_tag(t)).collect();
    let mut pairs = Vec::new();
    for &n in &boundary {
        for i in 0..3 {
            pairs.push((3 * n + i, exact(&mesh.nodes()[n], i)));
        }
    }
    pairs.sort_unstable_by_key(|p| p.0);
    pairs.dedup_by_key(|p| p.0);
    let bcs = BoundaryConditions {
        displacement: dirichlet(pairs),
        ..BoundaryConditions::free(&mesh)
    };
    let mut state = FieldState::zeros(&mesh);
    let out = newton_displacement(&asm, &mut state, &bcs, &config()).unwrap();
    assert!(out.converged);
    let mut interior = 0;
    for (n, p) in mesh.nodes().iter().enumerate() {
        if !boundary.contains(&n) {
            interior += 1;
            for i in 0..3 {
                assert!((state.u[3 * n + i] - exact(p, i)).abs() < 1e-9, "node {n}");
            }
        }
    }
    assert!(interior > 0);
}

/// Total stored energy of a single reference tetrahedron.
fn reference_tet_energy(u: &[f64], s_bar: f64, lambda: f64, mu: f64, k: f64) -> f64 {
    let grads = [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut du: Mat3 = [[0.0; 3]; 3];
    for a in 0..4 {
        for i in 0..3 {
            for j in 0..3 {
                du[i][j] += u[3 * a + i] * grads[a][j];
            }
        }
    }
    let eps: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| 0.5 * (du[i][j] + du[j][i])));
    let (p, m) = energy_split(&eps, lambda, mu);
    (((1.0 - s_bar) * (1.0 - s_bar) + k) * p + m) / 6.0
}

#[test]
fn internal_force_is_the_energy_gradient_on_one_element() {
    let nodes = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mesh = Mesh::new(nodes, vec![[0, 1, 2, 3]], vec![], vec![0]).unwrap();
    let k = 1e-6;
    let mat = field(&mesh, 1.0, 0.1, k);
    let (lambda, mu) = lame_constants(E, NU).unwrap();
    let asm = Assembler::new(&mesh, &mat).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut state = FieldState::zeros(&mesh);
        state.u = (0..12).map(|_| uniform(&mut rng, -1e-3, 1e-3)).collect();
        state.s = (0..4).map(|_| uniform(&mut rng, 0.0, 0.9)).collect();
        let s_bar = state.s.iter().sum::<f64>() / 4.0;
        let f = asm.internal_forces(&state).unwrap();
        let h = 1e-9;
        let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        for d in 0..12 {
            let mut up = state.u.clone();
            let mut um = state.u.clone();
            up[d] += h;
            um[d] -= h;
            let fd = (reference_tet_energy(&up, s_bar, lambda, mu, k) - reference_tet_energy(&um, s_bar, lambda, mu, k)) / (2.0 * h);
            assert!((fd - f[d]).abs() <= 1e-6 * norm, "dof {d}: {fd} vs {}", f[d]);
        }
    }
}

#[test]
fn jacobian_is_symmetric_and_matches_finite_differences() {
    let mesh = distorted_box(2, 0.15, 4);
    let mat = field(&mesh, 1.0, 0.1, 1e-8);
    let asm = Assembler::new(&mesh, &mat).unwrap();
    let bcs = BoundaryConditions::free(&mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        let mut state = FieldState::zeros(&mesh);
        state.u = (0..state.u.len()).map(|_| uniform(&mut rng, -1e-3, 1e-3)).collect();
        state.s = (0..state.s.len()).map(|_| uniform(&mut rng, 0.0, 0.8)).collect();
        let sys = asm.assemble_displacement(&state, &bcs).unwrap();
        let j = &sys.correction.matrix;
        assert!(j.asymmetry() < 1e-10);
        let h = 1e-9;
        let scale = j.frobenius() / (j.size() as f64).sqrt();
        for d in 0..state.u.len() {
            let mut sp = state.clone();
            let mut sm = state.clone();
            sp.u[d] += h;
            sm.u[d] -= h;
            let fp = asm.internal_forces(&sp).unwrap();
            let fm = asm.internal_forces(&sm).unwrap();
            for r in 0..fp.len() {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                assert!((fd - j.get(r, d)).abs() <= 1e-5 * scale, "entry ({r}, {d})");
            }
        }
    }
}

#[test]
fn uniform_history_gives_the_closed_form_on_a_distorted_mesh() {
    let mesh = distorted_box(4, 0.25, 6);
    let (gc, l) = (2.7, 0.05);
    let mat = field(&mesh, gc, l, 1e-8);
    let asm = Assembler::new(&mesh, &mat).unwrap();
    for h0 in [0.0, 1.0, 37.5, 1e4] {
        let sys = asm.assemble_phase(&vec![h0; mesh.tet_count()], &Constraints::default()).unwrap();
        let s = solve_linear(&sys, &LinearSolver::Direct).unwrap();
        let expected = 2.0 * h0 / (gc / l + 2.0 * h0);
        for v in s {
            assert!((v - expected).abs() < 1e-8);
        }
    }
}

/// Relative nodal L2 error of the clamped strip against `exp(-x / l)`.
fn strip_profile_error(l: f64, cells_per_l: usize) -> f64 {
    let length = 10.0 * l;
    let n = 10 * cells_per_l;
    let h = l / cells_per_l as f64;
    let mesh = generate_box_tet_mesh([length, h, h], [n, 1, 1]).unwrap();
    let mat = field(&mesh, 1.0, l, 1e-8);
    let asm = Assembler::new(&mesh, &mat).unwrap();
    let clamp = dirichlet(mesh.nodes_with_tag(side::X_MIN).into_iter().map(|n| (n, 1.0)).collect());
    let sys = asm.assemble_phase(&vec![0.0; mesh.tet_count()], &clamp).unwrap();
    let s = solve_linear(&sys, &LinearSolver::Direct).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (p, v) in mesh.nodes().iter().zip(&s) {
        let exact = (-p[0] / l).exp();
        num += (v - exact) * (v - exact);
        den += exact * exact;
    }
    (num / den).sqrt()
}

#[test]
fn clamped_strip_follows_the_exponential_profile() {
    let errors: Vec<f64> = [2, 4, 8].iter().map(|&c| strip_profile_error(0.1, c)).collect();
    assert!(errors[1] < 0.05, "{errors:?}");
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

/// Eigenvalues of a dense symmetric matrix by cyclic Jacobi rotations.
fn dense_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

#[test]
fn dense_eigen_oracle_on_a_known_matrix() {
    let ev = dense_eigenvalues(vec![vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 5.0]]);
    let mut ev = ev;
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_relative_eq!(ev[0], 1.0, epsilon = 1e-12);
    assert_relative_eq!(ev[1], 3.0, epsilon = 1e-12);
    assert_relative_eq!(ev[2], 5.0, epsilon = 1e-12);
}

#[test]
fn phase_operator_is_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..3 {
        let mesh = distorted_box(3, 0.2, 20 + seed);
        assert!(mesh.node_count() <= 300);
        let mat = field(&mesh, 0.5, 0.2, 1e-8);
        let asm = Assembler::new(&mesh, &mat).unwrap();
        let h: Vec<f64> = (0..mesh.tet_count()).map(|_| uniform(&mut rng, 0.0, 5.0)).collect();
        let sys = asm.assemble_phase(&h, &Constraints::default()).unwrap();
        assert!(sys.matrix.asymmetry() < 1e-14);
        let ev = dense_eigenvalues(sys.matrix.to_dense());
        let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min > 0.0, "smallest eigenvalue {min}");
    }
}

/// Linear-elastic stiffness of a tet mesh, assembled densely from
/// `B^T D B V` with gradients from the inverse coordinate Jacobian.
fn dense_stiffness(mesh: &Mesh, lambda: f64, mu: f64) -> Vec<Vec<f64>> {
    let n = 3 * mesh.node_count();
    let mut k = vec![vec![0.0; n]; n];
    for t in mesh.tets() {
        let x: Vec<[f64; 3]> = t.iter().map(|&v| mesh.nodes()[v]).collect();
        let j: Mat3 = std::array::from_fn(|r| std::array::from_fn(|c| x[c + 1][r] - x[0][r]));
        let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        let cof = |r: usize, c: usize| {
            let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
            let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
            j[r1][c1] * j[r2][c2] - j[r1][c2] * j[r2][c1]
        };
        // inv[a][b] = cof(b, a) / det; gradient of N_{a+1} is row a of inv
        let inv: Mat3 = std::array::from_fn(|a| std::array::from_fn(|b| cof(b, a) / det));
        let mut g = [[0.0; 3]; 4];
        for a in 0..3 {
            g[a + 1] = inv[a];
            for c in 0..3 {
                g[0][c] -= inv[a][c];
            }
        }
        let v = det / 6.0;
        for a in 0..4 {
            for b in 0..4 {
                for i in 0..3 {
                    for jj in 0..3 {
                        let mut kij = lambda * g[a][i] * g[b][jj] + mu * g[a][jj] * g[b][i];
                        if i == jj {
                            kij += mu * (0..3).map(|m| g[a][m] * g[b][m]).sum::<f64>();
                        }
                        k[3 * t[a] + i][3 * t[b] + jj] += v * kij;
                    }
                }
            }
        }
    }
    k
}

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (b[r] - (r + 1..n).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    x
}

#[test]
fn axially_loaded_bar_matches_a_dense_elastic_solve() {
    let (length, force) = (4.0, 2.5);
    let mesh = generate_box_tet_mesh([length, 1.0, 1.0], [2, 1, 1]).unwrap();
    let mat = field(&mesh, 1.0, 0.1, 1e-12);
    let (lambda, mu) = lame_constants(E, NU).unwrap();
    let asm = Assembler::new(&mesh, &mat).unwrap();
    let fixed = mesh.nodes_with_tag(side::X_MIN);
    let tip = mesh.nodes_with_tag(side::X_MAX);
    let mut bcs = BoundaryConditions::free(&mesh);
    bcs.displacement = dirichlet(fixed.iter().flat_map(|&n| (0..3).map(move |i| (3 * n + i, 0.0))).collect());
    for &n in &tip {
        bcs.forces[3 * n] = force / tip.len() as f64;
    }
    let mut state = FieldState::zeros(&mesh);
    assert!(newton_displacement(&asm, &mut state, &bcs, &config()).unwrap().converged);

    let k = dense_stiffness(&mesh, lambda, mu);
    let free: Vec<usize> = (0..3 * mesh.node_count()).filter(|d| !fixed.contains(&(d / 3))).collect();
    let kff: Vec<Vec<f64>> = free.iter().map(|&r| free.iter().map(|&c| k[r][c]).collect()).collect();
    let ff: Vec<f64> = free.iter().map(|&d| bcs.forces[d]).collect();
    let x = dense_solve(kff, ff);
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, &d) in free.iter().enumerate() {
        assert!((state.u[d] - x[i]).abs() <= 1e-8 * scale, "dof {d}");
    }
    // same order as the 1D estimate F L / (E A)
    let mean_tip = tip.iter().map(|&n| state.u[3 * n]).sum::<f64>() / tip.len() as f64;
    let bar = force * length / E;
    assert!(mean_tip > 0.5 * bar && mean_tip < 1.5 * bar);
}

#[test]
fn reactions_balance_a_traction_load() {
    let mesh = distorted_box(3, 0.1, 9);
    let mat = field(&mesh, 1.0, 0.1, 1e-8);
    let asm = Assembler::new(&mesh, &mat).unwrap();
    let fixed = mesh.nodes_with_tag(side::Z_MIN);
    let mut bcs = BoundaryConditions::free(&mesh);
    bcs.displacement = dirichlet(fixed.iter().flat_map(|&n| (0..3).map(move |i| (3 * n + i, 0.0))).collect());
    let traction = [0.3, -0.2, -1.0];
    let mut applied = [0.0; 3];
    for (n, w) in mesh.facet_area_weights(side::Z_MAX) {
        for i in 0..3 {
            bcs.forces[3 * n + i] += w * traction[i];
            applied[i] += w * traction[i];
        }
    }
    let mut state = FieldState::zeros(&mesh);
    assert!(newton_displacement(&asm, &mut state, &bcs, &config()).unwrap().converged);
    let r = total_reaction(&nodal_residual(&asm, &state, &bcs).unwrap(), &bcs);
    let scale = applied.iter().map(|v| v * v).sum::<f64>().sqrt();
    for i in 0..3 {
        assert!((r[i] + applied[i]).abs() <= 1e-8 * scale, "component {i}");
    }
}

#[test]
fn monolithic_tangent_matches_finite_differences() {
    let mesh = distorted_box(2, 0.15, 10);
    let mat = field(&mesh, 1.0, 0.2, 1e-8);
    let mut asm = Assembler::new(&mesh, &mat).unwrap();
    let bcs = BoundaryConditions::free(&mesh);
    let n = mesh.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut state = FieldState::zeros(&mesh);
    // mostly tensile strains so the history is active everywhere
    for (i, p) in mesh.nodes().iter().enumerate() {
        for c in 0..3 {
            state.u[3 * i + c] = 2e-3 * p[c] + uniform(&mut rng, -2e-4, 2e-4);
        }
    }
    state.s = (0..n).map(|_| uniform(&mut rng, 0.05, 0.6)).collect();
    let h_base = vec![0.0; mesh.tet_count()];
    let sys = asm.assemble_monolithic(&state, &bcs, &h_base).unwrap();
    let t = sys.correction.matrix.clone();
    let scale = t.frobenius() / (t.size() as f64).sqrt();
    let residual = |st: &FieldState, asm: &mut Assembler| asm.assemble_monolithic(st, &bcs, &h_base).unwrap().residual;
    let h = 1e-8;
    let mut worst = 0.0f64;
    for col in 0..4 * n {
        let mut sp = state.clone();
        let mut sm = state.clone();
        if col < 3 * n {
            sp.u[col] += h;
            sm.u[col] -= h;
        } else {
            sp.s[col - 3 * n] += h;
            sm.s[col - 3 * n] -= h;
        }
        let rp = residual(&sp, &mut asm);
        let rm = residual(&sm, &mut asm);
        for row in 0..4 * n {
            let fd = (rp[row] - rm[row]) / (2.0 * h);
            worst = worst.max((fd - t.get(row, col)).abs());
        }
    }
    assert!(worst <= 1e-4 * scale, "worst {worst:e}, scale {scale:e}");
}

#[test]
fn coupling_block_of_one_element_matches_finite_differences() {
    let nodes = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mesh = Mesh::new(nodes, vec![[0, 1, 2, 3]], vec![], vec![0]).unwrap();
    let mat = field(&mesh, 1.0, 0.2, 1e-8);
    let mut asm = Assembler::new(&mesh, &mat).unwrap();
    let bcs = BoundaryConditions::free(&mesh);
    let mut state = FieldState::zeros(&mesh);
    state.u = vec![0.0, 0.0, 0.0, 1e-3, 2e-4, 0.0, -1e-4, 8e-4, 0.0, 0.0, 3e-4, 1.2e-3];
    state.s = vec![0.1, 0.3, 0.2, 0.4];
    let h_base = vec![0.0];
    let t = asm.assemble_monolithic(&state, &bcs, &h_base).unwrap().correction.matrix;
    let h = 1e-7;
    for b in 0..4 {
        let mut sp = state.clone();
        let mut sm = state.clone();
        sp.s[b] += h;
        sm.s[b] -= h;
        let rp = asm.assemble_monolithic(&sp, &bcs, &h_base).unwrap().residual;
        let rm = asm.assemble_monolithic(&sm, &bcs, &h_base).unwrap().residual;
        for d in 0..12 {
            let fd = (rp[d] - rm[d]) / (2.0 * h);
            let exact = t.get(d, 12 + b);
            assert!((fd - exact).abs() <= 1e-4 * exact.abs().max(1e-6), "dR_u{d}/ds{b}: {fd} vs {exact}");
        }
    }
}
