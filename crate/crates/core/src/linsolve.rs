//! Linear solvers for assembled systems: Jacobi-preconditioned conjugate
//! gradients and a skyline (profile) LU factorisation on a reverse
//! Cuthill-McKee ordering.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::sparse::{CsrMatrix, SparseSystem};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LinearSolver {
    /// Skyline LU; handles unsymmetric values on a symmetric pattern.
    #[default]
    Direct,
    /// Conjugate gradients with diagonal preconditioning (SPD systems only).
    Cg { rel_tol: f64, max_iters: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinearSolveError {
    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },
    #[error("matrix is singular (pivot {pivot:e} at row {row})")]
    Singular { row: usize, pivot: f64 },
    #[error("right-hand side length {rhs} does not match matrix size {size}")]
    DimensionMismatch { rhs: usize, size: usize },
}

pub fn solve_linear(system: &SparseSystem, solver: &LinearSolver) -> Result<Vec<f64>, LinearSolveError> {
    solve_matrix(&system.matrix, &system.rhs, solver)
}

pub fn solve_matrix(a: &CsrMatrix, b: &[f64], solver: &LinearSolver) -> Result<Vec<f64>, LinearSolveError> {
    if b.len() != a.size() {
        return Err(LinearSolveError::DimensionMismatch {
            rhs: b.len(),
            size: a.size(),
        });
    }
    match *solver {
        LinearSolver::Direct => SkylineLu::factor(a)?.solve(b),
        LinearSolver::Cg { rel_tol, max_iters } => conjugate_gradient(a, b, rel_tol, max_iters),
    }
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dotp(a, a))
}

pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], rel_tol: f64, max_iters: usize) -> Result<Vec<f64>, LinearSolveError> {
    let n = a.size();
    let mut x = vec![0.0; n];
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dotp(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = 1.0;
    for it in 0..max_iters {
        a.mul_vec_into(&p, &mut ap);
        let alpha = rz / dotp(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm2(&r) / b_norm;
        if res < rel_tol {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dotp(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        if !res.is_finite() {
            return Err(LinearSolveError::CgNotConverged {
                iterations: it + 1,
                residual: res,
            });
        }
    }
    Err(LinearSolveError::CgNotConverged {
        iterations: max_iters,
        residual: res,
    })
}

/// Reverse Cuthill-McKee permutation of the (symmetrised) matrix graph;
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.size();
    let mut adj: Vec<Vec<usize>> = (0..n).map(|i| a.row(i).0.iter().copied().filter(|&j| j != i).collect()).collect();
    // make symmetric in case of structurally unsymmetric input
    for i in 0..n {
        for k in 0..adj[i].len() {
            let j = adj[i][k];
            if adj[j].binary_search(&i).is_err() {
                let pos = adj[j].binary_search(&i).unwrap_err();
                adj[j].insert(pos, i);
            }
        }
    }
    let degree: Vec<usize> = adj.iter().map(|r| r.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    let mut queue = VecDeque::new();
    let mut neigh = Vec::new();
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        let root = peripheral_node(&adj, &degree, start);
        visited[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            neigh.clear();
            neigh.extend(adj[v].iter().copied().filter(|&w| !visited[w]));
            neigh.sort_by_key(|&w| (degree[w], w));
            for &w in &neigh {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Pseudo-peripheral node of the component containing `start`.
fn peripheral_node(adj: &[Vec<usize>], degree: &[usize], start: usize) -> usize {
    let mut root = start;
    let mut best_ecc = 0;
    for _ in 0..4 {
        let (levels, last) = bfs_levels(adj, root);
        let ecc = levels;
        if ecc <= best_ecc && root != start {
            break;
        }
        best_ecc = ecc;
        let candidate = last.into_iter().min_by_key(|&v| (degree[v], v)).unwrap_or(root);
        if candidate == root {
            break;
        }
        root = candidate;
    }
    root
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> (usize, Vec<usize>) {
    let mut dist = alloc::collections::BTreeMap::new();
    dist.insert(root, 0usize);
    let mut frontier = vec![root];
    let mut level = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in &adj[v] {
                if let alloc::collections::btree_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(level + 1);
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return (level, frontier);
        }
        level += 1;
        frontier = next;
    }
}

/// LU factors in profile storage. Row `i` of `L` holds columns
/// `first[i]..i` (unit diagonal implied); column `j` of `U` holds rows
/// `first[j]..=j`.
const SYMMETRY_TOL: f64 = 1e-13;

pub struct SkylineLu {
    perm: Vec<usize>,
    first: Vec<usize>,
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<f64>>,
}

impl SkylineLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self, LinearSolveError> {
        let n = a.size();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old_i in 0..n {
            let i = inv[old_i];
            for &old_j in a.row(old_i).0 {
                let j = inv[old_j];
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                first[hi] = first[hi].min(lo);
            }
        }
        let mut lower: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; i - first[i]]).collect();
        let mut upper: Vec<Vec<f64>> = (0..n).map(|j| vec![0.0; j - first[j] + 1]).collect();
        let mut scale = 0.0f64;
        for old_i in 0..n {
            let i = inv[old_i];
            let (cols, vals) = a.row(old_i);
            for (&old_j, &v) in cols.iter().zip(vals) {
                let j = inv[old_j];
                if j < i {
                    lower[i][j - first[i]] = v;
                } else {
                    upper[j][i - first[j]] = v;
                }
                scale = scale.max(libm::fabs(v));
            }
        }
        // symmetric values: L row j is U column j scaled by the pivots
        let symmetric = a.asymmetry() < SYMMETRY_TOL;
        for j in 0..n {
            let fj = first[j];
            if symmetric {
                for i in fj..j {
                    let start = fj.max(first[i]);
                    let fi = first[i];
                    let ucol = &upper[j];
                    let acc = ucol[i - fj] - dot(&lower[i][start - fi..i - fi], &ucol[start - fj..i - fj]);
                    upper[j][i - fj] = acc;
                }
                let mut diag = upper[j][j - fj];
                for k in fj..j {
                    let u = upper[j][k - fj];
                    let l = u / upper[k][k - first[k]];
                    lower[j][k - fj] = l;
                    diag -= l * u;
                }
                upper[j][j - fj] = diag;
            } else {
                factor_column(j, &first, &mut lower, &mut upper);
            }
            let pivot = upper[j][j - fj];
            if !(libm::fabs(pivot) > 1e-14 * scale.max(f64::MIN_POSITIVE)) || !pivot.is_finite() {
                return Err(LinearSolveError::Singular { row: perm[j], pivot });
            }
        }
        Ok(Self {
            perm,
            first,
            lower,
            upper,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinearSolveError> {
        let n = self.perm.len();
        if b.len() != n {
            return Err(LinearSolveError::DimensionMismatch { rhs: b.len(), size: n });
        }
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let mut acc = y[i];
            for (m, l) in self.lower[i].iter().enumerate() {
                acc -= l * y[fi + m];
            }
            y[i] = acc;
        }
        for j in (0..n).rev() {
            let fj = self.first[j];
            let col = &self.upper[j];
            y[j] /= col[j - fj];
            let yj = y[j];
            for m in fj..j {
                y[m] -= col[m - fj] * yj;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four partial sums let the compiler vectorise
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn factor_column(j: usize, first: &[usize], lower: &mut [Vec<f64>], upper: &mut [Vec<f64>]) {
    let fj = first[j];
    // L row j
    for k in fj..j {
        let start = fj.max(first[k]);
        let (lrow, ucol) = (&lower[j], &upper[k]);
        let acc = lrow[k - fj] - dot(&lrow[start - fj..k - fj], &ucol[start - first[k]..k - first[k]]);
        lower[j][k - fj] = acc / upper[k][k - first[k]];
    }
    // U column j
    for i in fj..=j {
        let start = fj.max(first[i]);
        let mut acc = upper[j][i - fj];
        if i > start {
            let lrow = if i == j { &lower[j] } else { &lower[i] };
            let fi = first[i];
            acc -= dot(&lrow[start - fi..i - fi], &upper[j][start - fj..i - fj]);
        }
        upper[j][i - fj] = acc;
    }
}
