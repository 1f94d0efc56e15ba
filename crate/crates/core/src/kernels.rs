//! Pointwise constitutive kernels for the AT2 phase-field model with a
//! spectral tension/compression split of the small strain tensor.
//!
//! The tensile and compressive energies are
//! `psi_pm = lambda/2 <tr eps>_pm^2 + mu tr(eps_pm^2)` with
//! `<x>_+ = max(x, 0)`, `<x>_- = min(x, 0)` and `eps_pm` the spectral parts
//! of the strain. The stress is the exact derivative of
//! `g(s) psi_plus + psi_minus`, so `sigma_pm = lambda <tr eps>_pm I + 2 mu eps_pm`.
//!
//! Voigt ordering is `[xx, yy, zz, yz, xz, xy]` with engineering shear strains
//! (`gamma_xy = 2 eps_xy`); stresses are stored without the factor.

use thiserror::Error;

/// Dense 3x3 tensor, row-major.
pub type Mat3 = [[f64; 3]; 3];

/// Material tangent in Voigt notation.
pub type Tangent6 = [[f64; 6]; 6];

/// Largest tolerated `|eps_ij - eps_ji|` for a strain to count as symmetric.
pub const ASYMMETRY_TOL: f64 = 1e-12;

/// Slack allowed on `s` outside `[0, 1]` before [`degradation`] rejects it.
pub const PHASE_SLACK: f64 = 1e-9;

/// Relative eigenvalue gap below which the tangent uses a perturbed gap.
pub const EIGEN_GAP_TOL: f64 = 1e-8;

pub(crate) const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("strain tensor is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("phase-field value {0} lies outside [0, 1]")]
    PhaseOutOfRange(f64),
}

pub const ZERO3: Mat3 = [[0.0; 3]; 3];
pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn trace(a: &Mat3) -> f64 {
    a[0][0] + a[1][1] + a[2][2]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = ZERO3;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut t = ZERO3;
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

/// Double contraction `a : b`.
pub fn ddot(a: &Mat3, b: &Mat3) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += a[i][j] * b[i][j];
        }
    }
    acc
}

pub fn frobenius(a: &Mat3) -> f64 {
    libm::sqrt(ddot(a, a))
}

fn max_asymmetry(a: &Mat3) -> f64 {
    let d01 = libm::fabs(a[0][1] - a[1][0]);
    let d02 = libm::fabs(a[0][2] - a[2][0]);
    let d12 = libm::fabs(a[1][2] - a[2][1]);
    d01.max(d02).max(d12)
}

fn symmetric_part(a: &Mat3) -> Mat3 {
    let mut s = *a;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let m = 0.5 * (a[i][j] + a[j][i]);
            s[i][j] = m;
            s[j][i] = m;
        }
    }
    s
}

/// Strain tensor together with its spectral decomposition.
///
/// Eigenvalues are sorted in descending order. Each eigenvector is oriented so
/// that its largest-magnitude component is positive (first index wins ties),
/// which makes the decomposition reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrainState {
    pub strain: Mat3,
    pub eigenvalues: [f64; 3],
    /// `eigenvectors[i]` is the unit eigenvector for `eigenvalues[i]`.
    pub eigenvectors: [[f64; 3]; 3],
}

impl StrainState {
    pub fn new(strain: &Mat3) -> Result<Self, KernelError> {
        let asym = max_asymmetry(strain);
        if asym > ASYMMETRY_TOL {
            return Err(KernelError::NotSymmetric(asym));
        }
        Ok(Self::from_symmetric(&symmetric_part(strain)))
    }

    /// Decomposes the symmetric part of `strain` without checking asymmetry.
    pub(crate) fn from_symmetric(strain: &Mat3) -> Self {
        let (eigenvalues, eigenvectors) = symmetric_eigen(strain);
        Self {
            strain: *strain,
            eigenvalues,
            eigenvectors,
        }
    }

    /// `sum f(eps_i) e_i (x) e_i`
    fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Mat3 {
        let mut out = ZERO3;
        for k in 0..3 {
            let w = f(self.eigenvalues[k]);
            if w == 0.0 {
                continue;
            }
            let e = &self.eigenvectors[k];
            for i in 0..3 {
                for j in 0..3 {
                    out[i][j] += w * e[i] * e[j];
                }
            }
        }
        out
    }

    pub fn positive_part(&self) -> Mat3 {
        self.spectral_map(macaulay)
    }

    pub fn negative_part(&self) -> Mat3 {
        self.spectral_map(|x| -macaulay(-x))
    }

    fn sum_sq_positive(&self) -> f64 {
        self.eigenvalues.iter().map(|&x| macaulay(x) * macaulay(x)).sum()
    }

    fn sum_sq_negative(&self) -> f64 {
        self.eigenvalues.iter().map(|&x| macaulay(-x) * macaulay(-x)).sum()
    }
}

/// Cyclic Jacobi eigensolver for a symmetric 3x3 matrix.
fn symmetric_eigen(a: &Mat3) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut m = *a;
    let mut v = IDENTITY3;
    let scale = frobenius(a);
    if scale > 0.0 {
        for _sweep in 0..64 {
            let off = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
            if off <= (f64::EPSILON * 1e-2 * scale) * (f64::EPSILON * 1e-2 * scale) {
                break;
            }
            for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
                let apq = m[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(theta * theta + 1.0))
                } else {
                    -1.0 / (-theta + libm::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                let mut rot = IDENTITY3;
                rot[p][p] = c;
                rot[q][q] = c;
                rot[p][q] = s;
                rot[q][p] = -s;
                m = mat_mul(&transpose(&rot), &mat_mul(&m, &rot));
                m[p][q] = 0.0;
                m[q][p] = 0.0;
                v = mat_mul(&v, &rot);
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap_or(core::cmp::Ordering::Equal));
    let mut values = [0.0; 3];
    let mut vectors = [[0.0; 3]; 3];
    for (slot, &k) in order.iter().enumerate() {
        values[slot] = m[k][k];
        let mut e = [v[0][k], v[1][k], v[2][k]];
        let mut big = 0;
        for c in 1..3 {
            if libm::fabs(e[c]) > libm::fabs(e[big]) {
                big = c;
            }
        }
        if e[big] < 0.0 {
            for x in e.iter_mut() {
                *x = -*x;
            }
        }
        vectors[slot] = e;
    }
    (values, vectors)
}

/// `<x> = (x + |x|) / 2`
pub fn macaulay(x: f64) -> f64 {
    0.5 * (x + libm::fabs(x))
}

/// Splits a symmetric strain into its tensile and compressive parts.
pub fn spectral_split(strain: &Mat3) -> Result<(Mat3, Mat3), KernelError> {
    let st = StrainState::new(strain)?;
    Ok((st.positive_part(), st.negative_part()))
}

/// Tensile and compressive energy densities `(psi_plus, psi_minus)`.
pub fn energy_split(strain: &Mat3, lambda: f64, mu: f64) -> (f64, f64) {
    let st = StrainState::from_symmetric(&symmetric_part(strain));
    split_energies(&st, lambda, mu)
}

/// `<tr eps>` and `-<-tr eps>`; the volumetric part goes wholly to one side.
fn split_traces(st: &StrainState) -> (f64, f64) {
    let tr = st.eigenvalues[0] + st.eigenvalues[1] + st.eigenvalues[2];
    (macaulay(tr), -macaulay(-tr))
}

fn split_energies(st: &StrainState, lambda: f64, mu: f64) -> (f64, f64) {
    let (tp, tn) = split_traces(st);
    let plus = 0.5 * lambda * tp * tp + mu * st.sum_sq_positive();
    let minus = 0.5 * lambda * tn * tn + mu * st.sum_sq_negative();
    (plus, minus)
}

/// Full isotropic energy `lambda/2 (tr eps)^2 + mu tr(eps^2)`.
pub fn isotropic_energy(strain: &Mat3, lambda: f64, mu: f64) -> f64 {
    let tr = trace(strain);
    0.5 * lambda * tr * tr + mu * ddot(strain, strain)
}

/// `g(s) = (1 - s)^2 + k`
pub fn degradation(s: f64, k: f64) -> Result<f64, KernelError> {
    if !(-PHASE_SLACK..=1.0 + PHASE_SLACK).contains(&s) {
        return Err(KernelError::PhaseOutOfRange(s));
    }
    Ok(degradation_unchecked(s, k))
}

#[inline]
pub(crate) fn degradation_unchecked(s: f64, k: f64) -> f64 {
    (1.0 - s) * (1.0 - s) + k
}

/// AT2 crack surface density `(s^2 / l + l |grad s|^2) / 2`.
pub fn crack_density(s: f64, grad_s: &[f64; 3], l: f64) -> f64 {
    let g2 = grad_s[0] * grad_s[0] + grad_s[1] * grad_s[1] + grad_s[2] * grad_s[2];
    0.5 * (s * s / l + l * g2)
}

/// Irreversible history update `max(H_old, psi_plus)`.
pub fn history_update(h_old: f64, psi_plus: f64) -> f64 {
    if psi_plus > h_old {
        psi_plus
    } else {
        h_old
    }
}

/// Everything the assembly needs at one quadrature point.
#[derive(Debug, Clone, Copy)]
pub struct PointResponse {
    pub psi_plus: f64,
    pub psi_minus: f64,
    /// `sigma_plus = d psi_plus / d eps` (undegraded).
    pub stress_plus: Mat3,
    pub stress_minus: Mat3,
    /// `g(s) sigma_plus + sigma_minus`
    pub stress: Mat3,
}

pub(crate) fn evaluate_point(strain: &Mat3, s: f64, lambda: f64, mu: f64, k: f64) -> (StrainState, PointResponse) {
    let st = StrainState::from_symmetric(&symmetric_part(strain));
    let resp = response_of(&st, s, lambda, mu, k);
    (st, resp)
}

fn response_of(st: &StrainState, s: f64, lambda: f64, mu: f64, k: f64) -> PointResponse {
    let (psi_plus, psi_minus) = split_energies(st, lambda, mu);
    let (tp, tn) = split_traces(st);
    let e_plus = st.positive_part();
    let e_minus = st.negative_part();
    let g = degradation_unchecked(s, k);
    let mut stress_plus = ZERO3;
    let mut stress_minus = ZERO3;
    let mut stress = ZERO3;
    for i in 0..3 {
        for j in 0..3 {
            let delta = if i == j { 1.0 } else { 0.0 };
            stress_plus[i][j] = lambda * tp * delta + 2.0 * mu * e_plus[i][j];
            stress_minus[i][j] = lambda * tn * delta + 2.0 * mu * e_minus[i][j];
            stress[i][j] = g * stress_plus[i][j] + stress_minus[i][j];
        }
    }
    PointResponse {
        psi_plus,
        psi_minus,
        stress_plus,
        stress_minus,
        stress,
    }
}

/// Degraded Cauchy stress `g(s) sigma_plus + sigma_minus`.
pub fn stress(strain: &Mat3, s: f64, lambda: f64, mu: f64, k: f64) -> Mat3 {
    evaluate_point(strain, s, lambda, mu, k).1.stress
}

#[derive(Clone, Copy)]
enum Branch {
    Positive,
    Negative,
}

impl Branch {
    /// Ramp `<x>` or `-<-x>`.
    fn ramp(self, x: f64) -> f64 {
        match self {
            Branch::Positive => macaulay(x),
            Branch::Negative => -macaulay(-x),
        }
    }

    fn step(self, x: f64) -> f64 {
        if self.active(x) {
            1.0
        } else {
            0.0
        }
    }

    /// Zero eigenvalues count as compressive so the two branches partition
    /// the real line and the tangent stays elastic at zero strain.
    fn active(self, x: f64) -> bool {
        match self {
            Branch::Positive => x > 0.0,
            Branch::Negative => x <= 0.0,
        }
    }
}

/// Divided differences `theta_ij` of the ramp over the eigenvalues. On a
/// single branch the ramp is affine and the exact slope is used; across the
/// kink a gap smaller than `gap_tol` is widened to `gap_tol`.
fn divided_differences(values: &[f64; 3], branch: Branch, gap_tol: f64) -> [[f64; 3]; 3] {
    let mut ramp = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = (values[i], values[j]);
            if i == j || branch.active(a) == branch.active(b) {
                ramp[i][j] = branch.step(a);
            } else {
                let mut gap = a - b;
                if libm::fabs(gap) < gap_tol {
                    gap = if gap >= 0.0 { gap_tol } else { -gap_tol };
                }
                ramp[i][j] = (branch.ramp(a) - branch.ramp(b)) / gap;
            }
        }
    }
    ramp
}

/// Voigt matrix of `d F / d eps` for the isotropic tensor function
/// `F = sum f(eps_i) e_i (x) e_i`, given the divided differences of `f`.
fn spectral_derivative(vectors: &[[f64; 3]; 3], theta: &[[f64; 3]; 3]) -> Tangent6 {
    let mut d = [[0.0; 6]; 6];
    for (row, &(a, b)) in VOIGT_PAIRS.iter().enumerate() {
        for (col, &(k, l)) in VOIGT_PAIRS.iter().enumerate() {
            let mut acc = 0.0;
            for i in 0..3 {
                let ei = &vectors[i];
                for j in 0..3 {
                    let t = theta[i][j];
                    if t == 0.0 {
                        continue;
                    }
                    let ej = &vectors[j];
                    acc += t * ei[a] * ej[b] * 0.5 * (ei[k] * ej[l] + ei[l] * ej[k]);
                }
            }
            d[row][col] = acc;
        }
    }
    d
}

/// Tangents `(d sigma_plus / d eps, d sigma_minus / d eps)` in Voigt form.
pub(crate) fn split_tangents(st: &StrainState, lambda: f64, mu: f64) -> (Tangent6, Tangent6) {
    let scale = frobenius(&st.strain).max(1.0);
    let gap_tol = EIGEN_GAP_TOL * scale;
    let tr = st.eigenvalues[0] + st.eigenvalues[1] + st.eigenvalues[2];
    let mut out = [[[0.0; 6]; 6]; 2];
    for (slot, branch) in [Branch::Positive, Branch::Negative].into_iter().enumerate() {
        let d_ramp = spectral_derivative(&st.eigenvectors, &divided_differences(&st.eigenvalues, branch, gap_tol));
        let volumetric = lambda * branch.step(tr);
        for r in 0..6 {
            for c in 0..6 {
                let vol = if r < 3 && c < 3 { volumetric } else { 0.0 };
                out[slot][r][c] = vol + 2.0 * mu * d_ramp[r][c];
            }
        }
    }
    (out[0], out[1])
}

/// Consistent tangent `g(s) d sigma_plus + d sigma_minus` (Voigt, engineering shear).
pub fn consistent_tangent(strain: &Mat3, s: f64, lambda: f64, mu: f64, k: f64) -> Tangent6 {
    let st = StrainState::from_symmetric(&symmetric_part(strain));
    let (tp, tn) = split_tangents(&st, lambda, mu);
    combine_tangent(&tp, &tn, degradation_unchecked(s, k))
}

pub(crate) fn combine_tangent(plus: &Tangent6, minus: &Tangent6, g: f64) -> Tangent6 {
    let mut d = [[0.0; 6]; 6];
    for r in 0..6 {
        for c in 0..6 {
            d[r][c] = g * plus[r][c] + minus[r][c];
        }
    }
    d
}

/// Classical isotropic stiffness in the same Voigt convention.
pub fn isotropic_stiffness(lambda: f64, mu: f64) -> Tangent6 {
    let mut d = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            d[i][j] = lambda;
        }
        d[i][i] = lambda + 2.0 * mu;
        d[i + 3][i + 3] = mu;
    }
    d
}

/// Stress tensor to Voigt vector `[xx, yy, zz, yz, xz, xy]`.
pub fn stress_to_voigt(s: &Mat3) -> [f64; 6] {
    [s[0][0], s[1][1], s[2][2], s[1][2], s[0][2], s[0][1]]
}

/// Strain tensor to Voigt vector with engineering shears.
pub fn strain_to_voigt(e: &Mat3) -> [f64; 6] {
    [e[0][0], e[1][1], e[2][2], 2.0 * e[1][2], 2.0 * e[0][2], 2.0 * e[0][1]]
}

/// Inverse of [`strain_to_voigt`].
pub fn voigt_to_strain(v: &[f64; 6]) -> Mat3 {
    [
        [v[0], 0.5 * v[5], 0.5 * v[4]],
        [0.5 * v[5], v[1], 0.5 * v[3]],
        [0.5 * v[4], 0.5 * v[3], v[2]],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(a: f64, b: f64, c: f64) -> Mat3 {
        [[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]]
    }

    #[test]
    fn macaulay_values() {
        assert_eq!(macaulay(3.0), 3.0);
        assert_eq!(macaulay(-3.0), 0.0);
        assert_eq!(macaulay(0.0), 0.0);
    }

    #[test]
    fn split_of_diagonal_strain() {
        let (p, n) = spectral_split(&diag(2.0, -1.0, 0.0)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(p[i][j], diag(2.0, 0.0, 0.0)[i][j], epsilon = 1e-15);
                assert_relative_eq!(n[i][j], diag(0.0, -1.0, 0.0)[i][j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn pure_tension_has_no_negative_part() {
        let e = [[3.0, 0.1, 0.0], [0.1, 2.0, 0.2], [0.0, 0.2, 1.0]];
        let (p, n) = spectral_split(&e).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(p[i][j], e[i][j], epsilon = 1e-13);
                assert_relative_eq!(n[i][j], 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn asymmetric_strain_rejected() {
        let mut e = diag(1.0, 2.0, 3.0);
        e[0][1] = 1e-6;
        assert!(matches!(spectral_split(&e), Err(KernelError::NotSymmetric(_))));
    }

    #[test]
    fn uniaxial_energies() {
        let (lambda, mu, e) = (3.0, 2.0, 0.5);
        let full = 0.5 * lambda * e * e + mu * e * e;
        let (p, n) = energy_split(&diag(e, 0.0, 0.0), lambda, mu);
        assert_relative_eq!(p, full, max_relative = 1e-14);
        assert_eq!(n, 0.0);
        let (p, n) = energy_split(&diag(-e, 0.0, 0.0), lambda, mu);
        assert_eq!(p, 0.0);
        assert_relative_eq!(n, full, max_relative = 1e-14);
    }

    #[test]
    fn degradation_values() {
        assert_eq!(degradation(0.0, 1e-8).unwrap(), 1.0 + 1e-8);
        assert_eq!(degradation(1.0, 1e-8).unwrap(), 1e-8);
        assert_eq!(degradation(0.5, 0.0).unwrap(), 0.25);
        assert!(degradation(1.1, 0.0).is_err());
        assert!(degradation(-0.01, 0.0).is_err());
        assert!(degradation(1.0 + 1e-10, 0.0).is_ok());
    }

    #[test]
    fn crack_density_values() {
        assert_relative_eq!(crack_density(0.4, &[0.0; 3], 0.2), 0.16 / 0.4);
        assert_eq!(crack_density(0.0, &[0.0; 3], 0.2), 0.0);
        assert_relative_eq!(crack_density(0.0, &[3.0, 0.0, 4.0], 0.2), 0.2 * 25.0 / 2.0);
    }

    #[test]
    fn history_values() {
        assert_eq!(history_update(5.0, 3.0), 5.0);
        assert_eq!(history_update(3.0, 5.0), 5.0);
        assert_eq!(history_update(0.0, 0.0), 0.0);
    }

    #[test]
    fn zero_strain_gives_zero_stress() {
        for s in [0.0, 0.3, 1.0] {
            assert_eq!(stress(&ZERO3, s, 1.0, 1.0, 1e-8), ZERO3);
        }
    }

    #[test]
    fn compression_is_not_degraded() {
        let e = [[-0.3, 0.05, 0.0], [0.05, -0.2, 0.01], [0.0, 0.01, -0.1]];
        let broken = stress(&e, 1.0, 2.0, 1.5, 0.0);
        let tr = trace(&e);
        for i in 0..3 {
            for j in 0..3 {
                let intact = 2.0 * tr * IDENTITY3[i][j] + 3.0 * e[i][j];
                assert_relative_eq!(broken[i][j], intact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn tensile_tangent_is_classical_elasticity() {
        let e = [[3e-3, 1e-4, 0.0], [1e-4, 2e-3, 2e-4], [0.0, 2e-4, 1e-3]];
        let d = consistent_tangent(&e, 0.0, 5.0, 2.0, 0.0);
        let c = isotropic_stiffness(5.0, 2.0);
        for r in 0..6 {
            for col in 0..6 {
                assert_relative_eq!(d[r][col], c[r][col], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn compressive_tangent_ignores_phase() {
        let e = [[-3e-3, 1e-4, 0.0], [1e-4, -2e-3, 2e-4], [0.0, 2e-4, -1e-3]];
        let d0 = consistent_tangent(&e, 0.0, 5.0, 2.0, 1e-8);
        let d1 = consistent_tangent(&e, 0.9, 5.0, 2.0, 1e-8);
        assert_eq!(d0, d1);
    }

    #[test]
    fn repeated_eigenvalues_are_handled() {
        let e = diag(1e-3, 1e-3, -2e-3);
        let d = consistent_tangent(&e, 0.2, 5.0, 2.0, 1e-8);
        for r in 0..6 {
            for c in 0..6 {
                assert!(d[r][c].is_finite());
                assert_relative_eq!(d[r][c], d[c][r], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn voigt_round_trip() {
        let e = [[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]];
        assert_eq!(voigt_to_strain(&strain_to_voigt(&e)), e);
    }
}
