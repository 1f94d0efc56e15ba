//! Compressed sparse row storage and symmetric Dirichlet elimination.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SparseError {
    #[error("dof {dof} constrained to both {first} and {second}")]
    ConflictingConstraint { dof: usize, first: f64, second: f64 },
    #[error("constrained dof {dof} out of range for a system of size {size}")]
    ConstraintOutOfRange { dof: usize, size: usize },
    #[error("entry ({row}, {col}) is not in the sparsity pattern")]
    NotInPattern { row: usize, col: usize },
}

/// Square CSR matrix with a fixed sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a zero matrix from sorted, duplicate-free column lists per row.
    pub fn from_pattern(rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows {
            debug_assert!(r.windows(2).all(|w| w[0] < w[1]));
            col_idx.extend_from_slice(&r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    /// Pattern with `dofs(node)` unknowns per node coupled through `adjacency`.
    pub fn from_node_adjacency(adjacency: &[Vec<usize>], n_dofs: usize, dofs: impl Fn(usize, &mut Vec<usize>)) -> Self {
        let mut rows = vec![Vec::new(); n_dofs];
        let mut own = Vec::new();
        let mut cols = Vec::new();
        for (a, neigh) in adjacency.iter().enumerate() {
            cols.clear();
            for &b in neigh {
                dofs(b, &mut cols);
            }
            cols.sort_unstable();
            cols.dedup();
            own.clear();
            dofs(a, &mut own);
            for &r in &own {
                rows[r] = cols.clone();
            }
        }
        Self::from_pattern(rows)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::from_pattern((0..n).map(|i| vec![i]).collect());
        m.values.iter_mut().for_each(|v| *v = 1.0);
        m
    }

    /// Dense row-major input; exact zeros off the diagonal are dropped.
    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let rows = a
            .iter()
            .enumerate()
            .map(|(i, r)| (0..r.len()).filter(|&j| j == i || r[j] != 0.0).collect())
            .collect();
        let mut m = Self::from_pattern(rows);
        for i in 0..m.n {
            for p in m.row_ptr[i]..m.row_ptr[i + 1] {
                m.values[p] = a[i][m.col_idx[p]];
            }
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    fn position(&self, row: usize, col: usize) -> Option<usize> {
        let r = self.row_ptr[row]..self.row_ptr[row + 1];
        self.col_idx[r.clone()].binary_search(&col).ok().map(|p| r.start + p)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |p| self.values[p])
    }

    pub fn add(&mut self, row: usize, col: usize, v: f64) -> Result<(), SparseError> {
        let p = self.position(row, col).ok_or(SparseError::NotInPattern { row, col })?;
        self.values[p] += v;
        Ok(())
    }

    /// Scatters a dense local block `local[i * cols.len() + j]`.
    pub fn add_block(&mut self, rows: &[usize], cols: &[usize], local: &[f64]) -> Result<(), SparseError> {
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                let v = local[i * cols.len() + j];
                if v != 0.0 {
                    self.add(r, c, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            *yi = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    /// `||A - A^T||_F / ||A||_F`
    pub fn asymmetry(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                let d = self.values[p] - self.get(j, i);
                acc += d * d;
            }
        }
        let f = self.frobenius();
        if f == 0.0 {
            0.0
        } else {
            libm::sqrt(acc) / f
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[i][self.col_idx[p]] = self.values[p];
            }
        }
        d
    }
}

/// Dirichlet data: sorted, unique `(dof, value)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Constraints {
    pairs: Vec<(usize, f64)>,
}

impl Constraints {
    /// Merges pairs; repeated dofs must carry the same value.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Result<Self, SparseError> {
        pairs.sort_by_key(|p| p.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (dof, v) in pairs {
            match out.last() {
                Some(&(d, w)) if d == dof => {
                    if libm::fabs(v - w) > 1e-12 * libm::fabs(v).max(libm::fabs(w)).max(1e-300) {
                        return Err(SparseError::ConflictingConstraint {
                            dof,
                            first: w,
                            second: v,
                        });
                    }
                }
                _ => out.push((dof, v)),
            }
        }
        Ok(Self { pairs: out })
    }

    pub fn pairs(&self) -> &[(usize, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, dof: usize) -> bool {
        self.pairs.binary_search_by_key(&dof, |p| p.0).is_ok()
    }

    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &(d, _) in &self.pairs {
            m[d] = true;
        }
        m
    }

    /// Same dofs with values mapped through `f(dof, value)`.
    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        Self {
            pairs: self.pairs.iter().map(|&(d, v)| (d, f(d, v))).collect(),
        }
    }

    /// Constraints on a shifted dof range (e.g. phase dofs in a stacked vector).
    pub fn offset(&self, by: usize) -> Self {
        Self {
            pairs: self.pairs.iter().map(|&(d, v)| (d + by, v)).collect(),
        }
    }

    pub fn merged(&self, other: &Self) -> Result<Self, SparseError> {
        let mut all = self.pairs.clone();
        all.extend_from_slice(&other.pairs);
        Self::from_pairs(all)
    }
}

/// Linear system `A x = b` with its Dirichlet data.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constraints: Constraints,
}

impl SparseSystem {
    pub fn new(matrix: CsrMatrix, rhs: Vec<f64>) -> Self {
        Self {
            matrix,
            rhs,
            constraints: Constraints::default(),
        }
    }
}

/// Symmetric elimination: constrained rows and columns become identity rows,
/// the right-hand side carries the prescribed values and free rows are
/// corrected by `column * value`.
pub fn apply_dirichlet(system: &mut SparseSystem, constraints: &Constraints) -> Result<(), SparseError> {
    let n = system.matrix.size();
    if let Some(&(dof, _)) = constraints.pairs().iter().find(|p| p.0 >= n) {
        return Err(SparseError::ConstraintOutOfRange { dof, size: n });
    }
    let merged = system.constraints.merged(constraints)?;
    let mut value = vec![None; n];
    for &(d, v) in constraints.pairs() {
        value[d] = Some(v);
    }
    let m = &mut system.matrix;
    for i in 0..n {
        let range = m.row_ptr[i]..m.row_ptr[i + 1];
        if let Some(v) = value[i] {
            for p in range {
                m.values[p] = if m.col_idx[p] == i { 1.0 } else { 0.0 };
            }
            system.rhs[i] = v;
        } else {
            for p in range {
                if let Some(v) = value[m.col_idx[p]] {
                    system.rhs[i] -= m.values[p] * v;
                    m.values[p] = 0.0;
                }
            }
        }
    }
    system.constraints = merged;
    Ok(())
}

/// Adds `factor * nodal force` to the displacement right-hand side.
pub fn apply_nodal_forces(rhs: &mut [f64], forces: &[(usize, [f64; 3])], factor: f64) {
    for &(node, f) in forces {
        for k in 0..3 {
            rhs[3 * node + k] += factor * f[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conflicting_constraints_rejected() {
        assert!(Constraints::from_pairs(vec![(1, 0.0), (1, 0.0), (0, 2.0)]).is_ok());
        assert!(matches!(
            Constraints::from_pairs(vec![(1, 0.0), (1, 1.0)]),
            Err(SparseError::ConflictingConstraint { dof: 1, .. })
        ));
    }

    #[test]
    fn elimination_keeps_symmetry_and_values() {
        let a = vec![vec![4.0, -1.0, 0.0], vec![-1.0, 4.0, -1.0], vec![0.0, -1.0, 4.0]];
        let mut sys = SparseSystem::new(CsrMatrix::from_dense(&a), vec![1.0, 2.0, 3.0]);
        let c = Constraints::from_pairs(vec![(0, 0.5)]).unwrap();
        apply_dirichlet(&mut sys, &c).unwrap();
        assert_eq!(sys.matrix.asymmetry(), 0.0);
        assert_eq!(sys.rhs, vec![0.5, 2.5, 3.0]);
        assert_eq!(sys.matrix.get(0, 0), 1.0);
        assert_eq!(sys.matrix.get(1, 0), 0.0);
        assert!(apply_dirichlet(&mut sys, &Constraints::from_pairs(vec![(9, 0.0)]).unwrap()).is_err());
    }

    #[test]
    fn nodal_forces_scale() {
        let mut rhs = vec![0.0; 6];
        apply_nodal_forces(&mut rhs, &[(1, [1.0, 2.0, 3.0])], 0.5);
        assert_eq!(rhs, vec![0.0, 0.0, 0.0, 0.5, 1.0, 1.5]);
    }
}
