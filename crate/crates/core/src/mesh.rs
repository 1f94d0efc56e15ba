//! Linear tetrahedral meshes: validated storage, structured box generation and
//! per-element geometry.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

/// Volumes below this threshold (mm^3) are degenerate.
pub const DEGENERATE_VOLUME: f64 = 1e-14;

/// Surface tags assigned by [`generate_box_tet_mesh`] to the six box sides.
pub mod side {
    pub const X_MIN: i32 = 1;
    pub const X_MAX: i32 = 2;
    pub const Y_MIN: i32 = 3;
    pub const Y_MAX: i32 = 4;
    pub const Z_MIN: i32 = 5;
    pub const Z_MAX: i32 = 6;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("tetrahedron {element} references node {node} but the mesh has {count} nodes")]
    TetNodeOutOfRange { element: usize, node: usize, count: usize },
    #[error("boundary facet {facet} references node {node} but the mesh has {count} nodes")]
    FacetNodeOutOfRange { facet: usize, node: usize, count: usize },
    #[error("element {element} is degenerate (volume {volume:e} mm^3)")]
    Degenerate { element: usize, volume: f64 },
    #[error("element {element} has negative orientation")]
    NegativeOrientation { element: usize },
    #[error("boundary facet {facet} is shared by {count} tetrahedra (expected exactly one)")]
    FacetNotOnBoundary { facet: usize, count: usize },
    #[error("region tag count {tags} does not match tetrahedron count {tets}")]
    RegionCountMismatch { tags: usize, tets: usize },
    #[error("element index {0} out of range")]
    ElementOutOfRange(usize),
    #[error("invalid box parameters: {0}")]
    InvalidBox(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFacet {
    pub nodes: [usize; 3],
    pub tag: i32,
}

/// Node coordinates (mm), tetrahedra, tagged boundary facets and region tags.
///
/// A constructed mesh is always valid: indices are in range, every tet has
/// positive signed volume and every facet is a face of exactly one tet.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<[f64; 3]>,
    tets: Vec<[usize; 4]>,
    facets: Vec<BoundaryFacet>,
    regions: Vec<i32>,
}

fn sorted3(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

/// Faces of a tet ordered so that their normal points away from the
/// opposite vertex when the tet is positively oriented.
pub(crate) fn tet_faces(t: &[usize; 4]) -> [[usize; 3]; 4] {
    [[t[1], t[2], t[3]], [t[0], t[3], t[2]], [t[0], t[1], t[3]], [t[0], t[2], t[1]]]
}

fn signed_volume(p: &[[f64; 3]; 4]) -> f64 {
    let a = sub(&p[1], &p[0]);
    let b = sub(&p[2], &p[0]);
    let c = sub(&p[3], &p[0]);
    det3(&[a, b, c]) / 6.0
}

pub(crate) fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: &[f64; 3]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Determinant of the matrix whose rows are `r`.
fn det3(r: &[[f64; 3]; 3]) -> f64 {
    dot(&r[0], &cross(&r[1], &r[2]))
}

impl Mesh {
    pub fn new(
        nodes: Vec<[f64; 3]>,
        tets: Vec<[usize; 4]>,
        facets: Vec<BoundaryFacet>,
        regions: Vec<i32>,
    ) -> Result<Self, MeshError> {
        let mesh = Self {
            nodes,
            tets,
            facets,
            regions,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Like [`Mesh::new`], but swaps two nodes of every negatively oriented
    /// tet instead of rejecting it.
    pub fn new_reoriented(
        nodes: Vec<[f64; 3]>,
        mut tets: Vec<[usize; 4]>,
        facets: Vec<BoundaryFacet>,
        regions: Vec<i32>,
    ) -> Result<Self, MeshError> {
        let n = nodes.len();
        for (e, t) in tets.iter_mut().enumerate() {
            if let Some(&node) = t.iter().find(|&&v| v >= n) {
                return Err(MeshError::TetNodeOutOfRange {
                    element: e,
                    node,
                    count: n,
                });
            }
            let p = [nodes[t[0]], nodes[t[1]], nodes[t[2]], nodes[t[3]]];
            if signed_volume(&p) < 0.0 {
                t.swap(2, 3);
            }
        }
        Self::new(nodes, tets, facets, regions)
    }

    fn validate(&self) -> Result<(), MeshError> {
        let n = self.nodes.len();
        if self.regions.len() != self.tets.len() {
            return Err(MeshError::RegionCountMismatch {
                tags: self.regions.len(),
                tets: self.tets.len(),
            });
        }
        for (e, t) in self.tets.iter().enumerate() {
            if let Some(&node) = t.iter().find(|&&v| v >= n) {
                return Err(MeshError::TetNodeOutOfRange {
                    element: e,
                    node,
                    count: n,
                });
            }
            let v = signed_volume(&self.tet_points(e));
            if libm::fabs(v) < DEGENERATE_VOLUME {
                return Err(MeshError::Degenerate { element: e, volume: v });
            }
            if v < 0.0 {
                return Err(MeshError::NegativeOrientation { element: e });
            }
        }
        for (f, facet) in self.facets.iter().enumerate() {
            if let Some(&node) = facet.nodes.iter().find(|&&v| v >= n) {
                return Err(MeshError::FacetNodeOutOfRange {
                    facet: f,
                    node,
                    count: n,
                });
            }
        }
        if !self.facets.is_empty() {
            let counts = face_counts(&self.tets);
            for (f, facet) in self.facets.iter().enumerate() {
                let c = counts.get(&sorted3(facet.nodes)).copied().unwrap_or(0);
                if c != 1 {
                    return Err(MeshError::FacetNotOnBoundary { facet: f, count: c });
                }
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn facets(&self) -> &[BoundaryFacet] {
        &self.facets
    }

    pub fn region_tags(&self) -> &[i32] {
        &self.regions
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn tet_count(&self) -> usize {
        self.tets.len()
    }

    pub(crate) fn tet_points(&self, e: usize) -> [[f64; 3]; 4] {
        let t = &self.tets[e];
        [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]], self.nodes[t[3]]]
    }

    pub fn centroid(&self, e: usize) -> [f64; 3] {
        let p = self.tet_points(e);
        let mut c = [0.0; 3];
        for q in &p {
            for k in 0..3 {
                c[k] += 0.25 * q[k];
            }
        }
        c
    }

    /// Distinct facet tags in ascending order.
    pub fn facet_tags(&self) -> Vec<i32> {
        let mut tags: Vec<i32> = self.facets.iter().map(|f| f.tag).collect();
        tags.sort_unstable();
        tags.dedup();
        tags
    }

    /// Nodes touched by facets carrying `tag`, ascending.
    pub fn nodes_with_tag(&self, tag: i32) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .facets
            .iter()
            .filter(|f| f.tag == tag)
            .flat_map(|f| f.nodes)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Area-weighted nodal shares (one third of each facet area per vertex)
    /// of the surface carrying `tag`.
    pub fn facet_area_weights(&self, tag: i32) -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for f in self.facets.iter().filter(|f| f.tag == tag) {
            let [a, b, c] = f.nodes;
            let n = cross(&sub(&self.nodes[b], &self.nodes[a]), &sub(&self.nodes[c], &self.nodes[a]));
            let area = 0.5 * norm(&n);
            for v in f.nodes {
                *acc.entry(v).or_insert(0.0) += area / 3.0;
            }
        }
        acc.into_iter().collect()
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|e| signed_volume(&self.tet_points(e))).sum()
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.nodes {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Sorted node neighbourhoods (each node includes itself).
    pub fn node_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = (0..self.nodes.len()).map(|i| vec![i]).collect();
        for t in &self.tets {
            for &a in t {
                for &b in t {
                    adj[a].push(b);
                }
            }
        }
        for row in adj.iter_mut() {
            row.sort_unstable();
            row.dedup();
        }
        adj
    }
}

fn face_counts(tets: &[[usize; 4]]) -> BTreeMap<[usize; 3], usize> {
    let mut counts = BTreeMap::new();
    for t in tets {
        for f in tet_faces(t) {
            *counts.entry(sorted3(f)).or_insert(0usize) += 1;
        }
    }
    counts
}

/// Faces that belong to exactly one tet, outward oriented.
pub fn exterior_faces(tets: &[[usize; 4]]) -> Vec<[usize; 3]> {
    let counts = face_counts(tets);
    let mut out = Vec::new();
    for t in tets {
        for f in tet_faces(t) {
            if counts[&sorted3(f)] == 1 {
                out.push(f);
            }
        }
    }
    out
}

/// Volume of element `e` (mm^3).
pub fn element_volume(mesh: &Mesh, e: usize) -> Result<f64, MeshError> {
    if e >= mesh.tet_count() {
        return Err(MeshError::ElementOutOfRange(e));
    }
    let v = signed_volume(&mesh.tet_points(e));
    if libm::fabs(v) < DEGENERATE_VOLUME {
        return Err(MeshError::Degenerate { element: e, volume: v });
    }
    Ok(libm::fabs(v))
}

/// Constant spatial gradients of the four linear shape functions (rows).
pub fn element_gradient_matrix(mesh: &Mesh, e: usize) -> Result<[[f64; 3]; 4], MeshError> {
    element_volume(mesh, e)?;
    Ok(gradients(&mesh.tet_points(e)))
}

fn gradients(p: &[[f64; 3]; 4]) -> [[f64; 3]; 4] {
    // Rows of J^{-1} where the columns of J are the edge vectors from p0.
    let a = sub(&p[1], &p[0]);
    let b = sub(&p[2], &p[0]);
    let c = sub(&p[3], &p[0]);
    let det = det3(&[a, b, c]);
    let g1 = cross(&b, &c);
    let g2 = cross(&c, &a);
    let g3 = cross(&a, &b);
    let mut g = [[0.0; 3]; 4];
    for k in 0..3 {
        g[1][k] = g1[k] / det;
        g[2][k] = g2[k] / det;
        g[3][k] = g3[k] / det;
        g[0][k] = -(g[1][k] + g[2][k] + g[3][k]);
    }
    g
}

/// Cached volume and shape-function gradients of one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub volume: f64,
    pub gradients: [[f64; 3]; 4],
}

pub fn element_geometry(mesh: &Mesh) -> Result<Vec<ElementGeometry>, MeshError> {
    (0..mesh.tet_count())
        .map(|e| {
            Ok(ElementGeometry {
                volume: element_volume(mesh, e)?,
                gradients: gradients(&mesh.tet_points(e)),
            })
        })
        .collect()
}

/// How each hexahedral cell is cut into tetrahedra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HexSplit {
    /// Every cell uses the Kuhn split along the same main diagonal.
    #[default]
    Uniform,
    /// Cells in the upper half along x use the split reflected in x, so the
    /// mesh is mirror symmetric about the mid plane `x = Lx / 2`. Requires an
    /// even number of x divisions.
    MirroredX,
}

/// Structured box `[0, Lx] x [0, Ly] x [0, Lz]`, each hex cell split into six
/// tetrahedra, exterior faces tagged by side (see [`side`]).
pub fn generate_box_tet_mesh(lengths: [f64; 3], divisions: [usize; 3]) -> Result<Mesh, MeshError> {
    generate_box_tet_mesh_with(lengths, divisions, HexSplit::Uniform)
}

pub fn generate_box_tet_mesh_with(lengths: [f64; 3], divisions: [usize; 3], split: HexSplit) -> Result<Mesh, MeshError> {
    if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(MeshError::InvalidBox("lengths must be positive and finite"));
    }
    if divisions.contains(&0) {
        return Err(MeshError::InvalidBox("divisions must be at least 1"));
    }
    if split == HexSplit::MirroredX && !divisions[0].is_multiple_of(2) {
        return Err(MeshError::InvalidBox("mirrored split needs an even x division count"));
    }
    let [nx, ny, nz] = divisions;
    let node_id = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([
                    lengths[0] * i as f64 / nx as f64,
                    lengths[1] * j as f64 / ny as f64,
                    lengths[2] * k as f64 / nz as f64,
                ]);
            }
        }
    }
    // Kuhn simplices: monotone lattice paths from corner 000 to 111.
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let mirrored = split == HexSplit::MirroredX && i >= nx / 2;
                for perm in PERMS {
                    let mut corner = [0usize; 3];
                    let mut t = [0usize; 4];
                    for (step, slot) in t.iter_mut().enumerate() {
                        if step > 0 {
                            corner[perm[step - 1]] = 1;
                        }
                        let bx = if mirrored { 1 - corner[0] } else { corner[0] };
                        *slot = node_id(i + bx, j + corner[1], k + corner[2]);
                    }
                    let p = [nodes[t[0]], nodes[t[1]], nodes[t[2]], nodes[t[3]]];
                    if signed_volume(&p) < 0.0 {
                        t.swap(2, 3);
                    }
                    tets.push(t);
                }
            }
        }
    }
    let facets = tag_box_faces(&nodes, &exterior_faces(&tets), lengths, 0);
    let regions = vec![0; tets.len()];
    Mesh::new(nodes, tets, facets, regions)
}

/// Tags outward faces of an axis-aligned box by side; faces not lying on a
/// side plane get `interior_tag`.
pub(crate) fn tag_box_faces(
    nodes: &[[f64; 3]],
    faces: &[[usize; 3]],
    lengths: [f64; 3],
    interior_tag: i32,
) -> Vec<BoundaryFacet> {
    let tol = 1e-9 * lengths.iter().cloned().fold(0.0, f64::max);
    faces
        .iter()
        .map(|f| {
            let mut tag = interior_tag;
            for axis in 0..3 {
                let on = |target: f64| f.iter().all(|&v| libm::fabs(nodes[v][axis] - target) <= tol);
                if on(0.0) {
                    tag = 1 + 2 * axis as i32;
                    break;
                }
                if on(lengths[axis]) {
                    tag = 2 + 2 * axis as i32;
                    break;
                }
            }
            BoundaryFacet { nodes: *f, tag }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_tet() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![[0, 1, 2, 3]],
            vec![],
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn reference_tet_geometry() {
        let m = reference_tet();
        assert_relative_eq!(element_volume(&m, 0).unwrap(), 1.0 / 6.0, epsilon = 1e-15);
        let g = element_gradient_matrix(&m, 0).unwrap();
        let expected = [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for a in 0..4 {
            for k in 0..3 {
                assert_relative_eq!(g[a][k], expected[a][k], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn single_cube_and_two_cubes() {
        let m = generate_box_tet_mesh([1.0; 3], [1, 1, 1]).unwrap();
        assert_eq!((m.node_count(), m.tet_count()), (8, 6));
        assert_relative_eq!(m.total_volume(), 1.0, max_relative = 1e-12);
        let m = generate_box_tet_mesh([2.0, 1.0, 1.0], [2, 1, 1]).unwrap();
        assert_eq!((m.node_count(), m.tet_count()), (12, 12));
        assert_relative_eq!(m.total_volume(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn volume_sums_for_refinements() {
        for n in 1..=5 {
            let m = generate_box_tet_mesh([1.0; 3], [n, n, n]).unwrap();
            assert_eq!(m.tet_count(), 6 * n * n * n);
            let v: f64 = (0..m.tet_count()).map(|e| element_volume(&m, e).unwrap()).sum();
            assert!((v - 1.0).abs() < 1e-12, "n = {n}: {v}");
        }
    }

    #[test]
    fn every_exterior_face_has_one_side_tag() {
        let m = generate_box_tet_mesh([2.0, 3.0, 1.0], [2, 3, 2]).unwrap();
        // 2 triangles per exterior quad
        let quads = 2 * (2 * 3 + 2 * 2 + 3 * 2);
        assert_eq!(m.facets().len(), 2 * quads);
        assert!(m.facets().iter().all(|f| (1..=6).contains(&f.tag)));
        assert_eq!(m.facet_tags(), vec![1, 2, 3, 4, 5, 6]);
        let area: f64 = m.facet_area_weights(side::Z_MAX).iter().map(|(_, w)| w).sum();
        assert_relative_eq!(area, 6.0, max_relative = 1e-12);
    }

    #[test]
    fn mirrored_split_is_conforming_and_symmetric() {
        let m = generate_box_tet_mesh_with([2.0, 1.0, 1.0], [4, 2, 2], HexSplit::MirroredX).unwrap();
        // conforming: exterior faces are exactly the box surface
        assert_eq!(exterior_faces(m.tets()).len(), m.facets().len());
        assert_eq!(m.facets().len(), 2 * 2 * (4 * 2 + 4 * 2 + 2 * 2));
        assert_relative_eq!(m.total_volume(), 2.0, max_relative = 1e-12);
        // every centroid has a mirror image
        let mut cs: Vec<[f64; 3]> = (0..m.tet_count()).map(|e| m.centroid(e)).collect();
        for c in cs.clone() {
            let mirror = [2.0 - c[0], c[1], c[2]];
            assert!(cs.iter().any(|d| (0..3).all(|k| (d[k] - mirror[k]).abs() < 1e-12)));
        }
        cs.clear();
        assert!(generate_box_tet_mesh_with([1.0; 3], [3, 1, 1], HexSplit::MirroredX).is_err());
    }

    #[test]
    fn invalid_boxes() {
        assert!(generate_box_tet_mesh([0.0, 1.0, 1.0], [1, 1, 1]).is_err());
        assert!(generate_box_tet_mesh([1.0, -1.0, 1.0], [1, 1, 1]).is_err());
        assert!(generate_box_tet_mesh([1.0; 3], [1, 0, 1]).is_err());
    }

    #[test]
    fn invariants_enforced() {
        let nodes = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(
            Mesh::new(nodes.clone(), vec![[0, 2, 1, 3]], vec![], vec![0]),
            Err(MeshError::NegativeOrientation { element: 0 })
        ));
        assert!(Mesh::new_reoriented(nodes.clone(), vec![[0, 2, 1, 3]], vec![], vec![0]).is_ok());
        assert!(matches!(
            Mesh::new(nodes.clone(), vec![[0, 1, 2, 4]], vec![], vec![0]),
            Err(MeshError::TetNodeOutOfRange { .. })
        ));
        let flat = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert!(matches!(
            Mesh::new(flat, vec![[0, 1, 2, 3]], vec![], vec![0]),
            Err(MeshError::Degenerate { .. })
        ));
        let bad_facet = BoundaryFacet { nodes: [0, 1, 3], tag: 1 };
        assert!(Mesh::new(nodes.clone(), vec![[0, 1, 2, 3]], vec![bad_facet], vec![0]).is_ok());
        // interior face of two tets is not a boundary facet
        let mut nodes2 = nodes.clone();
        nodes2.push([1.0, 1.0, 1.0]);
        let tets = vec![[0, 1, 2, 3], [1, 4, 2, 3]];
        let mesh = Mesh::new_reoriented(nodes2.clone(), tets.clone(), vec![], vec![0, 0]).unwrap();
        let shared = BoundaryFacet { nodes: [1, 2, 3], tag: 9 };
        assert!(matches!(
            Mesh::new(nodes2, mesh.tets().to_vec(), vec![shared], vec![0, 0]),
            Err(MeshError::FacetNotOnBoundary { count: 2, .. })
        ));
    }
}
