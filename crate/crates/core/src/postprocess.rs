//! Reported quantities: support reactions, fractured volume, mesh-sensitivity
//! errors and mirror-symmetry measures.

use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use crate::assembly::{AssemblyError, Assembler, BoundaryConditions, FieldState};
use crate::mesh::{element_volume, Mesh, MeshError};

/// Default phase-field level above which an element counts as broken.
pub const DEFAULT_FRACTURE_THRESHOLD: f64 = 0.95;

/// Relative error (percent) below which a refinement counts as converged.
pub const CONVERGENCE_PERCENT: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PostprocessError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("surface tag {0} has no constrained dofs")]
    NoConstrainedDofs(i32),
    #[error("need at least two refinements, got {0}")]
    TooFewRefinements(usize),
    #[error("reference quantity is zero")]
    ZeroReference,
    #[error("series lengths differ: {0} abscissae, {1} ordinates")]
    LengthMismatch(usize, usize),
    #[error("node {0} has no mirror image")]
    NoMirrorNode(usize),
}

/// Unconstrained residual `f_int - f_ext` at every displacement dof.
pub fn nodal_residual(asm: &Assembler, state: &FieldState, bcs: &BoundaryConditions) -> Result<Vec<f64>, AssemblyError> {
    let mut r = asm.internal_forces(state)?;
    for (ri, f) in r.iter_mut().zip(&bcs.forces) {
        *ri -= f;
    }
    Ok(r)
}

/// Support reaction on a tagged surface projected on `direction` (N).
pub fn reaction_force(
    asm: &Assembler,
    state: &FieldState,
    bcs: &BoundaryConditions,
    tag: i32,
    direction: [f64; 3],
) -> Result<f64, PostprocessError> {
    let nodes = asm.mesh().nodes_with_tag(tag);
    let dofs: Vec<(usize, f64)> = nodes
        .iter()
        .flat_map(|&n| (0..3).map(move |k| (3 * n + k, direction[k])))
        .filter(|&(d, _)| bcs.displacement.contains(d))
        .collect();
    if dofs.is_empty() {
        return Err(PostprocessError::NoConstrainedDofs(tag));
    }
    let r = nodal_residual(asm, state, bcs)?;
    Ok(dofs.iter().map(|&(d, w)| r[d] * w).sum())
}

/// Sum of the residual over all constrained dofs, per component.
pub fn total_reaction(residual: &[f64], bcs: &BoundaryConditions) -> [f64; 3] {
    let mut out = [0.0; 3];
    for &(d, _) in bcs.displacement.pairs() {
        out[d % 3] += residual[d];
    }
    out
}

/// Volume of the elements whose mean nodal phase field exceeds `threshold`.
pub fn fractured_volume(mesh: &Mesh, s: &[f64], threshold: f64) -> Result<f64, MeshError> {
    let mut v = 0.0;
    for (e, t) in mesh.tets().iter().enumerate() {
        let mean = 0.25 * (s[t[0]] + s[t[1]] + s[t[2]] + s[t[3]]);
        if mean > threshold {
            v += element_volume(mesh, e)?;
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveSeries {
    pub abscissa: Vec<f64>,
    pub ordinate: Vec<f64>,
    pub label: String,
}

impl CurveSeries {
    pub fn new(abscissa: Vec<f64>, ordinate: Vec<f64>, label: impl Into<String>) -> Result<Self, PostprocessError> {
        if abscissa.len() != ordinate.len() {
            return Err(PostprocessError::LengthMismatch(abscissa.len(), ordinate.len()));
        }
        Ok(Self {
            abscissa,
            ordinate,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.abscissa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissa.is_empty()
    }

    /// Largest ordinate by absolute value, with its index.
    pub fn peak(&self) -> Option<(usize, f64)> {
        self.ordinate
            .iter()
            .copied()
            .enumerate()
            .fold(None, |best, (i, v)| match best {
                Some((_, b)) if libm::fabs(b) >= libm::fabs(v) => best,
                _ => Some((i, v)),
            })
    }
}

/// Errors of a mesh-sensitivity study against its finest refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeErrorCurve {
    /// Dof count against relative error in percent.
    pub series: CurveSeries,
    /// Index of the first refinement under [`CONVERGENCE_PERCENT`].
    pub first_converged: Option<usize>,
}

/// `|q_i - q_ref| / |q_ref| * 100` with the last entry as reference.
pub fn relative_error_curve(dofs: &[usize], quantities: &[f64]) -> Result<RelativeErrorCurve, PostprocessError> {
    if dofs.len() != quantities.len() {
        return Err(PostprocessError::LengthMismatch(dofs.len(), quantities.len()));
    }
    if quantities.len() < 2 {
        return Err(PostprocessError::TooFewRefinements(quantities.len()));
    }
    let q_ref = quantities[quantities.len() - 1];
    if q_ref == 0.0 {
        return Err(PostprocessError::ZeroReference);
    }
    let errors: Vec<f64> = quantities
        .iter()
        .map(|q| libm::fabs(q - q_ref) / libm::fabs(q_ref) * 100.0)
        .collect();
    let first_converged = errors.iter().position(|&e| e < CONVERGENCE_PERCENT);
    Ok(RelativeErrorCurve {
        series: CurveSeries::new(dofs.iter().map(|&d| d as f64).collect(), errors, "relative_error_percent")?,
        first_converged,
    })
}

/// For each node, the node at its reflection through `x = plane`.
pub fn mirror_node_map(mesh: &Mesh, plane: f64) -> Result<Vec<usize>, PostprocessError> {
    let (lo, hi) = mesh.bounds();
    let scale = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max).max(1.0);
    let q = |v: f64| libm::round(v / scale * 1e9) as i64;
    let key = |p: &[f64; 3]| (q(p[0]), q(p[1]), q(p[2]));
    let mut sorted: Vec<((i64, i64, i64), usize)> = mesh.nodes().iter().enumerate().map(|(i, p)| (key(p), i)).collect();
    sorted.sort_unstable();
    mesh.nodes()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let k = key(&[2.0 * plane - p[0], p[1], p[2]]);
            sorted
                .binary_search_by(|probe| probe.0.cmp(&k))
                .map(|pos| sorted[pos].1)
                .map_err(|_| PostprocessError::NoMirrorNode(i))
        })
        .collect()
}

/// `max_i |s_i - s_mirror(i)|`
pub fn mirror_asymmetry(s: &[f64], map: &[usize]) -> f64 {
    s.iter()
        .zip(map)
        .map(|(&a, &m)| libm::fabs(a - s[m]))
        .fold(0.0, f64::max)
}

/// Extent of the nodes with `s > threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DamageBand {
    pub count: usize,
    pub centroid: [f64; 3],
    pub min: [f64; 3],
    pub max: [f64; 3],
}

pub fn damage_band(mesh: &Mesh, s: &[f64], threshold: f64) -> Option<DamageBand> {
    let mut band = DamageBand {
        count: 0,
        centroid: [0.0; 3],
        min: [f64::INFINITY; 3],
        max: [f64::NEG_INFINITY; 3],
    };
    for (p, &v) in mesh.nodes().iter().zip(s) {
        if v > threshold {
            band.count += 1;
            for k in 0..3 {
                band.centroid[k] += p[k];
                band.min[k] = band.min[k].min(p[k]);
                band.max[k] = band.max[k].max(p[k]);
            }
        }
    }
    if band.count == 0 {
        return None;
    }
    for c in band.centroid.iter_mut() {
        *c /= band.count as f64;
    }
    Some(band)
}
