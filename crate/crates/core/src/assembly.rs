//! Finite-element assembly on linear tetrahedra with one quadrature point.
//!
//! Displacement dofs are numbered `3 * node + component`, phase dofs by node.
//! The coupled system stacks them as `[u; s]`, phase dof of node `a` at
//! `3 * n_nodes + a`. Element contributions are computed independently (in
//! parallel with the `parallel` feature) and scattered in element order, so
//! results do not depend on the worker count.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::kernels::{self, Mat3, Tangent6};
use crate::materials::{MaterialError, MaterialField, Region};
use crate::mesh::{element_geometry, ElementGeometry, Mesh, MeshError};
use crate::sparse::{apply_dirichlet, Constraints, CsrMatrix, SparseError, SparseSystem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("field state does not match the mesh: {0}")]
    StateMismatch(&'static str),
}

/// Nodal displacements (mm), nodal phase field and per-element history (MPa).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub h: Vec<f64>,
}

impl FieldState {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self {
            u: vec![0.0; 3 * mesh.node_count()],
            s: vec![0.0; mesh.node_count()],
            h: vec![0.0; mesh.tet_count()],
        }
    }

    pub fn check(&self, mesh: &Mesh) -> Result<(), AssemblyError> {
        if self.u.len() != 3 * mesh.node_count() {
            return Err(AssemblyError::StateMismatch("displacement length"));
        }
        if self.s.len() != mesh.node_count() {
            return Err(AssemblyError::StateMismatch("phase-field length"));
        }
        if self.h.len() != mesh.tet_count() {
            return Err(AssemblyError::StateMismatch("history length"));
        }
        if self.s.iter().any(|&s| !(-1e-9..=1.0 + 1e-9).contains(&s)) {
            return Err(AssemblyError::StateMismatch("phase field outside [0, 1]"));
        }
        if self.h.iter().any(|&h| !(h >= 0.0)) {
            return Err(AssemblyError::StateMismatch("negative history"));
        }
        Ok(())
    }
}

/// Loads and constraints of one load step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryConditions {
    /// Prescribed displacements by dof `3 * node + component`.
    pub displacement: Constraints,
    /// Applied nodal forces (N), length `3 * n_nodes`.
    pub forces: Vec<f64>,
    /// Prescribed phase-field values by node.
    pub phase: Constraints,
}

impl BoundaryConditions {
    pub fn free(mesh: &Mesh) -> Self {
        Self {
            displacement: Constraints::default(),
            forces: vec![0.0; 3 * mesh.node_count()],
            phase: Constraints::default(),
        }
    }
}

/// Displacement residual before elimination and the Newton correction
/// system after it.
#[derive(Debug, Clone)]
pub struct DisplacementSystem {
    /// `f_int - f_ext` at every dof.
    pub residual: Vec<f64>,
    /// `J du = -R` with `du = u_bar - u` on constrained dofs.
    pub correction: SparseSystem,
}

#[derive(Debug, Clone)]
pub struct MonolithicSystem {
    /// Stacked `[R_u; R_s]` before elimination.
    pub residual: Vec<f64>,
    pub correction: SparseSystem,
    /// History evaluated from the current strain.
    pub history: Vec<f64>,
}

/// Precomputed geometry and sparsity for one mesh and material field.
pub struct Assembler<'a> {
    mesh: &'a Mesh,
    materials: &'a MaterialField,
    geometry: Vec<ElementGeometry>,
    u_pattern: CsrMatrix,
    s_pattern: CsrMatrix,
    coupled_pattern: Option<CsrMatrix>,
    adjacency: Vec<Vec<usize>>,
    clamp_screw_history: bool,
}

#[cfg(feature = "parallel")]
fn map_elements<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_elements<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// `B_a^T D B_b` for shape gradients `ga`, `gb` (3x3 block).
fn stiffness_block(ga: &[f64; 3], gb: &[f64; 3], d: &Tangent6) -> [[f64; 3]; 3] {
    let b = |g: &[f64; 3]| -> [[f64; 3]; 6] {
        [
            [g[0], 0.0, 0.0],
            [0.0, g[1], 0.0],
            [0.0, 0.0, g[2]],
            [0.0, g[2], g[1]],
            [g[2], 0.0, g[0]],
            [g[1], g[0], 0.0],
        ]
    };
    let (ba, bb) = (b(ga), b(gb));
    let mut db = [[0.0; 3]; 6];
    for r in 0..6 {
        for c in 0..3 {
            db[r][c] = (0..6).map(|k| d[r][k] * bb[k][c]).sum();
        }
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..6).map(|r| ba[r][i] * db[r][j]).sum();
        }
    }
    out
}

fn stress_times_gradient(sigma: &Mat3, g: &[f64; 3]) -> [f64; 3] {
    let mut f = [0.0; 3];
    for i in 0..3 {
        f[i] = sigma[i][0] * g[0] + sigma[i][1] * g[1] + sigma[i][2] * g[2];
    }
    f
}

impl<'a> Assembler<'a> {
    pub fn new(mesh: &'a Mesh, materials: &'a MaterialField) -> Result<Self, AssemblyError> {
        materials.check_mesh(mesh)?;
        let geometry = element_geometry(mesh)?;
        let adjacency = mesh.node_adjacency();
        let u_pattern = CsrMatrix::from_node_adjacency(&adjacency, 3 * mesh.node_count(), |a, out| {
            out.extend_from_slice(&[3 * a, 3 * a + 1, 3 * a + 2]);
        });
        let s_pattern = CsrMatrix::from_node_adjacency(&adjacency, mesh.node_count(), |a, out| out.push(a));
        Ok(Self {
            mesh,
            materials,
            geometry,
            u_pattern,
            s_pattern,
            coupled_pattern: None,
            adjacency,
            clamp_screw_history: true,
        })
    }

    /// Whether screw elements keep `H = 0` (default `true`).
    pub fn with_screw_history_clamp(mut self, clamp: bool) -> Self {
        self.clamp_screw_history = clamp;
        self
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    pub fn materials(&self) -> &MaterialField {
        self.materials
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.geometry
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.node_count()
    }

    fn coupled_pattern(&mut self) -> CsrMatrix {
        if self.coupled_pattern.is_none() {
            let n = self.n_nodes();
            self.coupled_pattern = Some(CsrMatrix::from_node_adjacency(&self.adjacency, 4 * n, |a, out| {
                out.extend_from_slice(&[3 * a, 3 * a + 1, 3 * a + 2, 3 * n + a]);
            }));
        }
        let mut m = self.coupled_pattern.clone().unwrap_or_else(|| CsrMatrix::identity(0));
        m.zero();
        m
    }

    /// Small strain `sym(grad u)` of element `e`.
    pub fn element_strain(&self, e: usize, u: &[f64]) -> Mat3 {
        let t = &self.mesh.tets()[e];
        let g = &self.geometry[e].gradients;
        let mut grad = [[0.0; 3]; 3];
        for a in 0..4 {
            let ua = &u[3 * t[a]..3 * t[a] + 3];
            for i in 0..3 {
                for j in 0..3 {
                    grad[i][j] += ua[i] * g[a][j];
                }
            }
        }
        let mut eps = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                eps[i][j] = 0.5 * (grad[i][j] + grad[j][i]);
            }
        }
        eps
    }

    /// Element mean of the nodal phase field.
    pub fn element_phase(&self, e: usize, s: &[f64]) -> f64 {
        let t = &self.mesh.tets()[e];
        0.25 * (s[t[0]] + s[t[1]] + s[t[2]] + s[t[3]])
    }

    fn history_frozen(&self, e: usize) -> bool {
        self.clamp_screw_history && self.materials.get(e).region == Region::Screw
    }

    /// Tensile energy density `psi_plus` of every element.
    pub fn tensile_energy(&self, u: &[f64]) -> Vec<f64> {
        map_elements(self.mesh.tet_count(), |e| {
            let m = self.materials.get(e);
            kernels::energy_split(&self.element_strain(e, u), m.lambda, m.mu).0
        })
    }

    /// `max(h_base, psi_plus(u))` per element; zero in clamped screw elements.
    pub fn history_from_strain(&self, u: &[f64], h_base: &[f64]) -> Vec<f64> {
        let psi = self.tensile_energy(u);
        (0..self.mesh.tet_count())
            .map(|e| {
                if self.history_frozen(e) {
                    0.0
                } else {
                    kernels::history_update(h_base[e], psi[e])
                }
            })
            .collect()
    }

    fn check_state(&self, state: &FieldState) -> Result<(), AssemblyError> {
        if state.u.len() != 3 * self.n_nodes() || state.s.len() != self.n_nodes() || state.h.len() != self.mesh.tet_count() {
            return Err(AssemblyError::StateMismatch("array lengths"));
        }
        Ok(())
    }

    /// Internal nodal forces `int sigma : eps(v)` at the frozen phase field.
    pub fn internal_forces(&self, state: &FieldState) -> Result<Vec<f64>, AssemblyError> {
        self.check_state(state)?;
        let k = self.materials.residual_stiffness();
        let locals = map_elements(self.mesh.tet_count(), |e| {
            let m = self.materials.get(e);
            let eps = self.element_strain(e, &state.u);
            let sigma = kernels::stress(&eps, self.element_phase(e, &state.s), m.lambda, m.mu, k);
            let geo = &self.geometry[e];
            let mut f = [[0.0; 3]; 4];
            for (a, fa) in f.iter_mut().enumerate() {
                let t = stress_times_gradient(&sigma, &geo.gradients[a]);
                for i in 0..3 {
                    fa[i] = geo.volume * t[i];
                }
            }
            f
        });
        let mut out = vec![0.0; 3 * self.n_nodes()];
        for (e, f) in locals.iter().enumerate() {
            for (a, &node) in self.mesh.tets()[e].iter().enumerate() {
                for i in 0..3 {
                    out[3 * node + i] += f[a][i];
                }
            }
        }
        Ok(out)
    }

    /// Residual `f_int - f_ext` and consistent Jacobian at frozen `s`, with
    /// Dirichlet dofs eliminated symmetrically from the correction system.
    pub fn assemble_displacement(&self, state: &FieldState, bcs: &BoundaryConditions) -> Result<DisplacementSystem, AssemblyError> {
        self.check_state(state)?;
        if bcs.forces.len() != 3 * self.n_nodes() {
            return Err(AssemblyError::StateMismatch("force vector length"));
        }
        let k = self.materials.residual_stiffness();
        let locals = map_elements(self.mesh.tet_count(), |e| {
            let m = self.materials.get(e);
            let eps = self.element_strain(e, &state.u);
            let s_bar = self.element_phase(e, &state.s);
            let (st, resp) = kernels::evaluate_point(&eps, s_bar, m.lambda, m.mu, k);
            let (tp, tn) = kernels::split_tangents(&st, m.lambda, m.mu);
            let d = kernels::combine_tangent(&tp, &tn, kernels::degradation_unchecked(s_bar, k));
            let geo = &self.geometry[e];
            let mut f = [0.0; 12];
            let mut ke = [0.0; 144];
            for a in 0..4 {
                let t = stress_times_gradient(&resp.stress, &geo.gradients[a]);
                for i in 0..3 {
                    f[3 * a + i] = geo.volume * t[i];
                }
                for b in 0..4 {
                    let blk = stiffness_block(&geo.gradients[a], &geo.gradients[b], &d);
                    for i in 0..3 {
                        for j in 0..3 {
                            ke[(3 * a + i) * 12 + 3 * b + j] = geo.volume * blk[i][j];
                        }
                    }
                }
            }
            (f, ke)
        });
        let mut residual: Vec<f64> = bcs.forces.iter().map(|f| -f).collect();
        let mut jac = self.u_pattern.clone();
        let mut dofs = [0usize; 12];
        for (e, (f, ke)) in locals.iter().enumerate() {
            for (a, &node) in self.mesh.tets()[e].iter().enumerate() {
                for i in 0..3 {
                    dofs[3 * a + i] = 3 * node + i;
                }
            }
            for (p, &d) in dofs.iter().enumerate() {
                residual[d] += f[p];
            }
            jac.add_block(&dofs, &dofs, ke)?;
        }
        let rhs: Vec<f64> = residual.iter().map(|r| -r).collect();
        let mut correction = SparseSystem::new(jac, rhs);
        let delta = bcs.displacement.map_values(|dof, v| v - state.u[dof]);
        apply_dirichlet(&mut correction, &delta)?;
        Ok(DisplacementSystem { residual, correction })
    }

    /// Phase-field system `[Gc l K + (Gc/l + 2H) M] s = 2H M 1` with a
    /// row-sum lumped `M`, for a given element history, with phase
    /// constraints eliminated.
    pub fn assemble_phase(&self, history: &[f64], phase: &Constraints) -> Result<SparseSystem, AssemblyError> {
        if history.len() != self.mesh.tet_count() {
            return Err(AssemblyError::StateMismatch("history length"));
        }
        let locals = map_elements(self.mesh.tet_count(), |e| self.phase_element(e, history[e]));
        let mut a = self.s_pattern.clone();
        let mut rhs = vec![0.0; self.n_nodes()];
        for (e, (ke, fe)) in locals.iter().enumerate() {
            let t = &self.mesh.tets()[e];
            a.add_block(t, t, ke)?;
            for (p, &node) in t.iter().enumerate() {
                rhs[node] += fe[p];
            }
        }
        let mut sys = SparseSystem::new(a, rhs);
        apply_dirichlet(&mut sys, phase)?;
        Ok(sys)
    }

    /// Element phase matrix and load for history `h`.
    fn phase_element(&self, e: usize, h: f64) -> ([f64; 16], [f64; 4]) {
        let m = self.materials.get(e);
        let geo = &self.geometry[e];
        let h = if self.history_frozen(e) { 0.0 } else { h };
        let reaction = (m.gc / m.l + 2.0 * h) / 4.0;
        let mut ke = [0.0; 16];
        for a in 0..4 {
            for b in 0..4 {
                let gg = geo.gradients[a][0] * geo.gradients[b][0]
                    + geo.gradients[a][1] * geo.gradients[b][1]
                    + geo.gradients[a][2] * geo.gradients[b][2];
                ke[4 * a + b] = geo.volume * m.gc * m.l * gg;
            }
            // lumped reaction term keeps 0 <= s <= 1
            ke[5 * a] += geo.volume * reaction;
        }
        let load = geo.volume * 2.0 * h / 4.0;
        (ke, [load; 4])
    }

    /// Residual of the phase equation at `s` for a given history.
    pub fn phase_residual(&self, s: &[f64], history: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        let sys = self.assemble_phase(history, &Constraints::default())?;
        let mut r = sys.matrix.mul_vec(s);
        for (ri, bi) in r.iter_mut().zip(&sys.rhs) {
            *ri -= bi;
        }
        Ok(r)
    }

    /// Coupled residual and full tangent at `(u, s)`. The history is
    /// refreshed from the current strain on top of `h_base` first.
    pub fn assemble_monolithic(
        &mut self,
        state: &FieldState,
        bcs: &BoundaryConditions,
        h_base: &[f64],
    ) -> Result<MonolithicSystem, AssemblyError> {
        self.check_state(state)?;
        if h_base.len() != self.mesh.tet_count() || bcs.forces.len() != 3 * self.n_nodes() {
            return Err(AssemblyError::StateMismatch("history or force length"));
        }
        let n = self.n_nodes();
        let mut tangent = self.coupled_pattern();
        let k = self.materials.residual_stiffness();
        let locals = map_elements(self.mesh.tet_count(), |e| {
            let m = self.materials.get(e);
            let geo = &self.geometry[e];
            let t = &self.mesh.tets()[e];
            let eps = self.element_strain(e, &state.u);
            let s_bar = self.element_phase(e, &state.s);
            let (st, resp) = kernels::evaluate_point(&eps, s_bar, m.lambda, m.mu, k);
            let (tp, tn) = kernels::split_tangents(&st, m.lambda, m.mu);
            let g = kernels::degradation_unchecked(s_bar, k);
            let d = kernels::combine_tangent(&tp, &tn, g);
            let frozen = self.history_frozen(e);
            let active = !frozen && resp.psi_plus > h_base[e];
            let h = if frozen { 0.0 } else { h_base[e].max(resp.psi_plus) };
            let v = geo.volume;
            // local ordering: u dofs of the 4 nodes (12), then s dofs (4)
            let mut r = [0.0; 16];
            let mut kt = [0.0; 256];
            let dg = -2.0 * (1.0 - s_bar);
            let sig_plus_g: [[f64; 3]; 4] = core::array::from_fn(|a| stress_times_gradient(&resp.stress_plus, &geo.gradients[a]));
            for a in 0..4 {
                let f = stress_times_gradient(&resp.stress, &geo.gradients[a]);
                for i in 0..3 {
                    r[3 * a + i] = v * f[i];
                }
                let grad_s_dot: f64 = (0..4)
                    .map(|b| {
                        state.s[t[b]]
                            * (geo.gradients[a][0] * geo.gradients[b][0]
                                + geo.gradients[a][1] * geo.gradients[b][1]
                                + geo.gradients[a][2] * geo.gradients[b][2])
                    })
                    .sum();
                let s_a = state.s[t[a]];
                r[12 + a] = v * (m.gc * m.l * grad_s_dot + ((m.gc / m.l) * s_a - 2.0 * h * (1.0 - s_a)) / 4.0);
                for b in 0..4 {
                    let blk = stiffness_block(&geo.gradients[a], &geo.gradients[b], &d);
                    for i in 0..3 {
                        for j in 0..3 {
                            kt[(3 * a + i) * 16 + 3 * b + j] = v * blk[i][j];
                        }
                        // dR_u / ds
                        kt[(3 * a + i) * 16 + 12 + b] = v * dg * 0.25 * sig_plus_g[a][i];
                        // dR_s / du through the active history
                        if active {
                            kt[(12 + a) * 16 + 3 * b + i] = -v * 2.0 * (1.0 - s_a) * 0.25 * sig_plus_g[b][i];
                        }
                    }
                    let gg = geo.gradients[a][0] * geo.gradients[b][0]
                        + geo.gradients[a][1] * geo.gradients[b][1]
                        + geo.gradients[a][2] * geo.gradients[b][2];
                    kt[(12 + a) * 16 + 12 + b] = v * m.gc * m.l * gg;
                }
                kt[(12 + a) * 16 + 12 + a] += v * (m.gc / m.l + 2.0 * h) / 4.0;
            }
            (r, kt, h)
        });
        let mut residual = vec![0.0; 4 * n];
        for i in 0..3 * n {
            residual[i] = -bcs.forces[i];
        }
        let mut history = Vec::with_capacity(locals.len());
        let mut dofs = [0usize; 16];
        for (e, (r, kt, h)) in locals.iter().enumerate() {
            for (a, &node) in self.mesh.tets()[e].iter().enumerate() {
                for i in 0..3 {
                    dofs[3 * a + i] = 3 * node + i;
                }
                dofs[12 + a] = 3 * n + node;
            }
            for (p, &d) in dofs.iter().enumerate() {
                residual[d] += r[p];
            }
            tangent.add_block(&dofs, &dofs, kt)?;
            history.push(*h);
        }
        let rhs: Vec<f64> = residual.iter().map(|r| -r).collect();
        let mut correction = SparseSystem::new(tangent, rhs);
        let du = bcs.displacement.map_values(|dof, v| v - state.u[dof]);
        let ds = bcs.phase.map_values(|node, v| v - state.s[node]).offset(3 * n);
        apply_dirichlet(&mut correction, &du.merged(&ds)?)?;
        Ok(MonolithicSystem {
            residual,
            correction,
            history,
        })
    }
}

/// Zeroes entries of `v` on constrained dofs.
pub fn free_part(v: &[f64], constraints: &Constraints) -> Vec<f64> {
    let mut out = v.to_vec();
    for &(d, _) in constraints.pairs() {
        out[d] = 0.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsolve::{solve_linear, LinearSolver};
    use crate::mesh::generate_box_tet_mesh;
    use approx::assert_relative_eq;

    fn unit_field(mesh: &Mesh) -> MaterialField {
        MaterialField::homogeneous(mesh.tet_count(), 1000.0, 0.25, 1.0, 0.1, 1e-8).unwrap()
    }

    #[test]
    fn zero_state_has_zero_residual() {
        let mesh = generate_box_tet_mesh([1.0; 3], [2, 2, 2]).unwrap();
        let mat = unit_field(&mesh);
        let asm = Assembler::new(&mesh, &mat).unwrap();
        let sys = asm.assemble_displacement(&FieldState::zeros(&mesh), &BoundaryConditions::free(&mesh)).unwrap();
        assert!(sys.residual.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn uniform_history_gives_closed_form_phase() {
        let mesh = generate_box_tet_mesh([1.0, 2.0, 0.5], [3, 4, 2]).unwrap();
        let mat = unit_field(&mesh);
        let asm = Assembler::new(&mesh, &mat).unwrap();
        let h0 = 3.7;
        let sys = asm.assemble_phase(&vec![h0; mesh.tet_count()], &Constraints::default()).unwrap();
        let s = solve_linear(&sys, &LinearSolver::Direct).unwrap();
        let expected = 2.0 * h0 / (1.0 / 0.1 + 2.0 * h0);
        for v in s {
            assert_relative_eq!(v, expected, epsilon = 1e-8);
        }
        let zero = asm.assemble_phase(&vec![0.0; mesh.tet_count()], &Constraints::default()).unwrap();
        assert!(solve_linear(&zero, &LinearSolver::Direct).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_dofs_constrained_to_zero() {
        let mesh = generate_box_tet_mesh([1.0; 3], [1, 1, 1]).unwrap();
        let mat = unit_field(&mesh);
        let asm = Assembler::new(&mesh, &mat).unwrap();
        let mut bcs = BoundaryConditions::free(&mesh);
        bcs.forces.iter_mut().for_each(|f| *f = 1.0);
        bcs.displacement = Constraints::from_pairs((0..24).map(|d| (d, 0.0)).collect()).unwrap();
        let sys = asm.assemble_displacement(&FieldState::zeros(&mesh), &bcs).unwrap();
        let du = solve_linear(&sys.correction, &LinearSolver::Direct).unwrap();
        assert!(du.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn monolithic_tangent_decouples_at_rest() {
        let mesh = generate_box_tet_mesh([1.0; 3], [1, 1, 2]).unwrap();
        let mat = unit_field(&mesh);
        let mut asm = Assembler::new(&mesh, &mat).unwrap();
        let state = FieldState::zeros(&mesh);
        let n = mesh.node_count();
        let sys = asm
            .assemble_monolithic(&state, &BoundaryConditions::free(&mesh), &vec![0.0; mesh.tet_count()])
            .unwrap();
        let dense = sys.correction.matrix.to_dense();
        for i in 0..3 * n {
            for j in 3 * n..4 * n {
                assert_eq!(dense[i][j], 0.0);
                assert_eq!(dense[j][i], 0.0);
            }
        }
    }
}
