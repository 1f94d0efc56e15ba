//! Boundary-value problems: the single-edge-notched specimen and the
//! vertebra analog with two pedicle screws.
//!
//! A [`LoadProgram`] is evaluated at a continuous load parameter `t`; step
//! `n` ends at `t = n`. Every prescribed value and nodal force is affine in
//! `t`, which lets the solvers bisect a step.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::assembly::BoundaryConditions;
use crate::materials::{assign_vertebra_analog, AnalogSpec, Calibration, ElementMaterial, MaterialError, MaterialField, Region, ScrewCylinder};
use crate::mesh::{self, exterior_faces, generate_box_tet_mesh, generate_box_tet_mesh_with, side, HexSplit, Mesh, MeshError};
use crate::sparse::{Constraints, SparseError};

/// Facet tag of the two crack faces of the SENT slit.
pub const NOTCH_TAG: i32 = 7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("notch length {length} must lie in (0, {limit}]")]
    NotchLength { length: f64, limit: f64 },
    #[error("invalid scenario parameter: {0}")]
    Invalid(&'static str),
    #[error("screw {screw} leaves the block through a lateral face")]
    ScrewExitsBlock { screw: usize },
    #[error("screw {screw} head has no mesh nodes on the posterior face")]
    EmptyScrewHead { screw: usize },
    #[error("load program references node {node} but the mesh has {count}")]
    NodeOutOfRange { node: usize, count: usize },
    #[error("load program set `{0}` is empty")]
    EmptySet(String),
}

/// Value `constant + per_step * t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ramp {
    pub constant: f64,
    pub per_step: f64,
}

impl Ramp {
    pub const FIXED: Ramp = Ramp {
        constant: 0.0,
        per_step: 0.0,
    };

    pub fn linear(per_step: f64) -> Self {
        Self { constant: 0.0, per_step }
    }

    pub fn at(&self, t: f64) -> f64 {
        self.constant + self.per_step * t
    }
}

/// Prescribed displacement components on a node set.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletSet {
    pub label: String,
    pub nodes: Vec<usize>,
    pub components: [Option<Ramp>; 3],
}

/// Force on one node: `constant + per_step * t` (N).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodalLoad {
    pub node: usize,
    pub constant: [f64; 3],
    pub per_step: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceSet {
    pub label: String,
    pub loads: Vec<NodalLoad>,
}

impl ForceSet {
    pub fn total(&self, t: f64) -> [f64; 3] {
        let mut f = [0.0; 3];
        for l in &self.loads {
            for k in 0..3 {
                f[k] += l.constant[k] + l.per_step[k] * t;
            }
        }
        f
    }
}

/// Reaction summed over the constrained dofs of one Dirichlet set and
/// projected on `direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionMonitor {
    pub label: String,
    pub set: usize,
    pub direction: [f64; 3],
}

/// Displacement probe used as the curve abscissa: the mean of `u . d` over
/// the nodes when a direction is given, else the mean magnitude of `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub nodes: Vec<usize>,
    pub direction: Option<[f64; 3]>,
}

impl Probe {
    pub fn measure(&self, u: &[f64]) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .nodes
            .iter()
            .map(|&n| {
                let v = [u[3 * n], u[3 * n + 1], u[3 * n + 2]];
                match self.direction {
                    Some(d) => mesh::dot(&v, &d),
                    None => mesh::norm(&v),
                }
            })
            .sum();
        sum / self.nodes.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Motion {
    Flexion,
    Extension,
    TorsionCcw,
    Benchmark,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadProgram {
    pub n_steps: usize,
    pub dirichlet: Vec<DirichletSet>,
    pub forces: Vec<ForceSet>,
    /// Prescribed phase-field values by node, constant in time.
    pub phase: Vec<(usize, f64)>,
    pub monitors: Vec<ReactionMonitor>,
    pub probe: Probe,
    pub motion: Motion,
    /// Screw insertion angles (cranio-caudal, medio-lateral) in degrees.
    pub alpha: (f64, f64),
    /// Vertical preload (N).
    pub f_v: f64,
}

impl LoadProgram {
    /// Checks node references against a mesh with `n_nodes` nodes.
    pub fn validate(&self, n_nodes: usize) -> Result<(), ScenarioError> {
        let check = |node: usize| {
            if node >= n_nodes {
                Err(ScenarioError::NodeOutOfRange { node, count: n_nodes })
            } else {
                Ok(())
            }
        };
        for set in &self.dirichlet {
            if set.nodes.is_empty() {
                return Err(ScenarioError::EmptySet(set.label.clone()));
            }
            set.nodes.iter().try_for_each(|&n| check(n))?;
            if set.components.iter().flatten().any(|r| !r.constant.is_finite() || !r.per_step.is_finite()) {
                return Err(ScenarioError::Invalid("non-finite prescribed displacement"));
            }
        }
        for set in &self.forces {
            for l in &set.loads {
                check(l.node)?;
                if l.constant.iter().chain(&l.per_step).any(|v| !v.is_finite()) {
                    return Err(ScenarioError::Invalid("non-finite nodal force"));
                }
            }
        }
        self.phase.iter().try_for_each(|&(n, _)| check(n))?;
        self.probe.nodes.iter().try_for_each(|&n| check(n))?;
        if self.monitors.iter().any(|m| m.set >= self.dirichlet.len()) {
            return Err(ScenarioError::Invalid("monitor refers to a missing Dirichlet set"));
        }
        Ok(())
    }

    pub fn constraints_at(&self, t: f64) -> Result<Constraints, ScenarioError> {
        let mut pairs = Vec::new();
        for set in &self.dirichlet {
            for (k, c) in set.components.iter().enumerate() {
                if let Some(r) = c {
                    let v = r.at(t);
                    pairs.extend(set.nodes.iter().map(|&n| (3 * n + k, v)));
                }
            }
        }
        Ok(Constraints::from_pairs(pairs)?)
    }

    pub fn forces_at(&self, n_nodes: usize, t: f64) -> Vec<f64> {
        let mut f = vec![0.0; 3 * n_nodes];
        for set in &self.forces {
            for l in &set.loads {
                for k in 0..3 {
                    f[3 * l.node + k] += l.constant[k] + l.per_step[k] * t;
                }
            }
        }
        f
    }

    pub fn loads_at(&self, n_nodes: usize, t: f64) -> Result<BoundaryConditions, ScenarioError> {
        Ok(BoundaryConditions {
            displacement: self.constraints_at(t)?,
            forces: self.forces_at(n_nodes, t),
            phase: Constraints::from_pairs(self.phase.clone())?,
        })
    }

    /// Sum of all applied nodal forces at `t`.
    pub fn total_applied(&self, t: f64) -> [f64; 3] {
        let mut f = [0.0; 3];
        for set in &self.forces {
            let s = set.total(t);
            for k in 0..3 {
                f[k] += s[k];
            }
        }
        f
    }

    /// `(dof, direction component)` pairs a monitor sums over.
    pub fn monitor_dofs(&self, monitor: &ReactionMonitor) -> Vec<(usize, f64)> {
        let set = &self.dirichlet[monitor.set];
        let mut out = Vec::new();
        for &n in &set.nodes {
            for k in 0..3 {
                if set.components[k].is_some() && monitor.direction[k] != 0.0 {
                    out.push((3 * n + k, monitor.direction[k]));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SentMode {
    Tension,
    Shear,
}

/// Square plate `width x width`, one element thick, with an edge slit from
/// `x = 0` to `x = notch_length` at mid height.
#[derive(Debug, Clone, PartialEq)]
pub struct SentSpec {
    pub mode: SentMode,
    pub width: f64,
    /// Cells per side; must be even so the slit lies on grid lines.
    pub divisions: usize,
    pub notch_length: f64,
    /// Out-of-plane extent (mm), fixed so reactions compare across meshes.
    pub thickness: f64,
    pub e: f64,
    pub nu: f64,
    pub gc: f64,
    pub l: f64,
    pub residual_stiffness: f64,
    pub n_steps: usize,
    /// Prescribed top displacement at the last step (mm).
    pub max_displacement: f64,
}

impl SentSpec {
    pub fn new(mode: SentMode) -> Self {
        Self {
            mode,
            width: 1.0,
            divisions: 40,
            notch_length: 0.5,
            thickness: 0.025,
            e: 210_000.0,
            nu: 0.3,
            gc: 2.7,
            l: 0.05,
            residual_stiffness: crate::materials::DEFAULT_RESIDUAL_STIFFNESS,
            n_steps: 40,
            max_displacement: match mode {
                SentMode::Tension => 0.01,
                SentMode::Shear => 0.02,
            },
        }
    }
}

/// Box mesh with the nodes on `y = y0, x < a` duplicated for the elements
/// above the slit. The two crack faces are tagged [`NOTCH_TAG`].
pub fn slit_box_mesh(lengths: [f64; 3], divisions: [usize; 3], notch_length: f64) -> Result<Mesh, ScenarioError> {
    let base = generate_box_tet_mesh(lengths, divisions)?;
    let y0 = 0.5 * lengths[1];
    let tol = 1e-9 * lengths[0].max(lengths[1]);
    let mut nodes = base.nodes().to_vec();
    let mut twin = vec![usize::MAX; nodes.len()];
    for (i, p) in base.nodes().iter().enumerate() {
        if libm::fabs(p[1] - y0) <= tol && p[0] < notch_length - tol {
            twin[i] = nodes.len();
            nodes.push(*p);
        }
    }
    let mut tets = base.tets().to_vec();
    for (e, t) in tets.iter_mut().enumerate() {
        if base.centroid(e)[1] > y0 {
            for v in t.iter_mut() {
                if twin[*v] != usize::MAX {
                    *v = twin[*v];
                }
            }
        }
    }
    let facets = mesh::tag_box_faces(&nodes, &exterior_faces(&tets), lengths, NOTCH_TAG);
    let regions = vec![0; tets.len()];
    Ok(Mesh::new(nodes, tets, facets, regions)?)
}

pub fn build_sent(spec: &SentSpec) -> Result<(Mesh, MaterialField, LoadProgram), ScenarioError> {
    if spec.divisions < 2 || !spec.divisions.is_multiple_of(2) {
        return Err(ScenarioError::Invalid("SENT divisions must be even and at least 2"));
    }
    if !(spec.width > 0.0 && spec.thickness > 0.0) || spec.n_steps == 0 || !spec.max_displacement.is_finite() {
        return Err(ScenarioError::Invalid("SENT width, thickness, steps and displacement"));
    }
    let limit = 0.5 * spec.width;
    if !(spec.notch_length > 0.0 && spec.notch_length <= limit) {
        return Err(ScenarioError::NotchLength {
            length: spec.notch_length,
            limit,
        });
    }
    let n = spec.divisions;
    let lengths = [spec.width, spec.width, spec.thickness];
    let mesh = slit_box_mesh(lengths, [n, n, 1], spec.notch_length)?;
    let m = ElementMaterial::new(spec.e, spec.nu, spec.gc, spec.l, Region::Homogeneous)?;
    let materials = MaterialField::new(vec![m; mesh.tet_count()], spec.residual_stiffness)?;

    let bottom = mesh.nodes_with_tag(side::Y_MIN);
    let top = mesh.nodes_with_tag(side::Y_MAX);
    let all: Vec<usize> = (0..mesh.node_count()).collect();
    let du = spec.max_displacement / spec.n_steps as f64;
    let (top_components, dir) = match spec.mode {
        SentMode::Tension => ([Some(Ramp::FIXED), Some(Ramp::linear(du)), None], [0.0, 1.0, 0.0]),
        SentMode::Shear => ([Some(Ramp::linear(du)), Some(Ramp::FIXED), None], [1.0, 0.0, 0.0]),
    };
    let program = LoadProgram {
        n_steps: spec.n_steps,
        dirichlet: vec![
            DirichletSet {
                label: "bottom".to_string(),
                nodes: bottom,
                components: [Some(Ramp::FIXED), Some(Ramp::FIXED), None],
            },
            DirichletSet {
                label: "top".to_string(),
                nodes: top.clone(),
                components: top_components,
            },
            DirichletSet {
                label: "plane_strain".to_string(),
                nodes: all,
                components: [None, None, Some(Ramp::FIXED)],
            },
        ],
        forces: Vec::new(),
        phase: Vec::new(),
        monitors: vec![ReactionMonitor {
            label: "top".to_string(),
            set: 1,
            direction: dir,
        }],
        probe: Probe {
            nodes: top,
            direction: Some(dir),
        },
        motion: Motion::Benchmark,
        alpha: (0.0, 0.0),
        f_v: 0.0,
    };
    program.validate(mesh.node_count())?;
    Ok((mesh, materials, program))
}

/// Block analog of a lumbar vertebra. Axes: x medio-lateral, y
/// posterior (`y = 0`, screw entry) to anterior, z caudal to cranial.
#[derive(Debug, Clone, PartialEq)]
pub struct VertebraSpec {
    pub lengths: [f64; 3],
    /// Cell counts; x must be even for the mirror-symmetric mesh.
    pub divisions: [usize; 3],
    /// (cranio-caudal, medio-lateral) insertion angles in degrees.
    pub alpha: (f64, f64),
    pub motion: Motion,
    pub f_v: f64,
    pub n_steps: usize,
    /// Screw-head load added per step as a fraction of `f_v`.
    pub step_fraction: f64,
    pub shell_thickness: f64,
    pub screw_radius: f64,
    pub screw_length: f64,
    /// Distance of each entry point from the mid-sagittal plane.
    pub entry_offset: f64,
    /// Height of the entry points.
    pub entry_z: f64,
    /// Flexion direction of the screw-head force (normalised on use).
    pub flexion_direction: [f64; 3],
    pub seed: u64,
    pub mirror_seeds: bool,
    pub calibration: Calibration,
    pub residual_stiffness: f64,
}

impl Default for VertebraSpec {
    fn default() -> Self {
        Self {
            lengths: [50.0, 50.0, 30.0],
            divisions: [20, 20, 12],
            alpha: (0.0, 0.0),
            motion: Motion::Flexion,
            f_v: 5.0,
            n_steps: 40,
            step_fraction: 0.1,
            shell_thickness: 2.0,
            screw_radius: 3.25,
            screw_length: 40.0,
            entry_offset: 12.5,
            entry_z: 15.0,
            flexion_direction: [0.0, 1.0, -1.0],
            seed: 1,
            mirror_seeds: true,
            calibration: Calibration::default(),
            residual_stiffness: crate::materials::DEFAULT_RESIDUAL_STIFFNESS,
        }
    }
}

impl VertebraSpec {
    /// Left (`x < Lx/2`) and right screw cylinders.
    pub fn screws(&self) -> [ScrewCylinder; 2] {
        let a1 = self.alpha.0.to_radians();
        let a2 = self.alpha.1.to_radians();
        let (s1, c1) = (libm::sin(a1), libm::cos(a1));
        let (s2, c2) = (libm::sin(a2), libm::cos(a2));
        let xm = 0.5 * self.lengths[0];
        let make = |sign: f64| ScrewCylinder {
            entry: [xm - sign * self.entry_offset, 0.0, self.entry_z],
            axis: [sign * s2 * c1, c2 * c1, s1],
            radius: self.screw_radius,
            length: self.screw_length,
        };
        [make(1.0), make(-1.0)]
    }
}

fn normalized(v: [f64; 3]) -> Result<[f64; 3], ScenarioError> {
    let n = mesh::norm(&v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(ScenarioError::Invalid("direction vector must be non-zero"));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

fn check_screw_inside(spec: &VertebraSpec, i: usize, screw: &ScrewCylinder) -> Result<(), ScenarioError> {
    let [lx, ly, lz] = spec.lengths;
    let depth = if screw.axis[1] > 0.0 { ly / screw.axis[1] } else { f64::INFINITY };
    let t_end = screw.length.min(depth);
    for t in [0.0, t_end] {
        let p = [screw.entry[0] + t * screw.axis[0], screw.entry[2] + t * screw.axis[2]];
        let r = screw.radius;
        if p[0] - r < 0.0 || p[0] + r > lx || p[1] - r < 0.0 || p[1] + r > lz {
            return Err(ScenarioError::ScrewExitsBlock { screw: i });
        }
    }
    Ok(())
}

pub fn build_vertebra_analog(spec: &VertebraSpec) -> Result<(Mesh, MaterialField, LoadProgram), ScenarioError> {
    if spec.n_steps == 0 || !(spec.f_v >= 0.0) || !(spec.step_fraction >= 0.0) {
        return Err(ScenarioError::Invalid("vertebra steps, preload or step fraction"));
    }
    for a in [spec.alpha.0, spec.alpha.1] {
        if !(-15.0..=15.0).contains(&a) {
            return Err(ScenarioError::Invalid("insertion angles must lie in [-15, 15] degrees"));
        }
    }
    let mesh = generate_box_tet_mesh_with(spec.lengths, spec.divisions, HexSplit::MirroredX)?;
    let screws = spec.screws();
    for (i, s) in screws.iter().enumerate() {
        check_screw_inside(spec, i, s)?;
    }
    let mut analog = AnalogSpec::new(spec.shell_thickness, screws.to_vec(), spec.seed);
    analog.calibration = spec.calibration;
    analog.residual_stiffness = spec.residual_stiffness;
    if spec.mirror_seeds {
        analog.mirror_plane_x = Some(0.5 * spec.lengths[0]);
    }
    let materials = assign_vertebra_analog(&mesh, &analog)?;

    let tol = 1e-9 * spec.lengths[0];
    let posterior = mesh.nodes_with_tag(side::Y_MIN);
    let heads: Vec<Vec<usize>> = screws
        .iter()
        .map(|s| {
            posterior
                .iter()
                .copied()
                .filter(|&n| s.axis_distance(&mesh.nodes()[n]) <= s.radius + tol)
                .collect()
        })
        .collect();
    if let Some(i) = heads.iter().position(|h| h.is_empty()) {
        return Err(ScenarioError::EmptyScrewHead { screw: i });
    }

    let mut forces = Vec::new();
    let top_weights = mesh.facet_area_weights(side::Z_MAX);
    let top_area: f64 = top_weights.iter().map(|w| w.1).sum();
    forces.push(ForceSet {
        label: "preload".to_string(),
        loads: top_weights
            .iter()
            .map(|&(node, w)| NodalLoad {
                node,
                constant: [0.0, 0.0, -spec.f_v * w / top_area],
                per_step: [0.0; 3],
            })
            .collect(),
    });
    let per_head = 0.5 * spec.step_fraction * spec.f_v;
    let flexion = normalized(spec.flexion_direction)?;
    for (i, head) in heads.iter().enumerate() {
        let dir = match spec.motion {
            Motion::Flexion => flexion,
            Motion::Extension => [-flexion[0], -flexion[1], -flexion[2]],
            // counter-clockwise about +z through the midpoint of the heads
            Motion::TorsionCcw => {
                if i == 0 {
                    [0.0, -1.0, 0.0]
                } else {
                    [0.0, 1.0, 0.0]
                }
            }
            Motion::Benchmark => [0.0; 3],
        };
        let f = per_head / head.len() as f64;
        forces.push(ForceSet {
            label: if i == 0 { "screw_left".to_string() } else { "screw_right".to_string() },
            loads: head
                .iter()
                .map(|&node| NodalLoad {
                    node,
                    constant: [0.0; 3],
                    per_step: [f * dir[0], f * dir[1], f * dir[2]],
                })
                .collect(),
        });
    }

    let mut probe_nodes: Vec<usize> = heads.concat();
    probe_nodes.sort_unstable();
    let program = LoadProgram {
        n_steps: spec.n_steps,
        dirichlet: vec![DirichletSet {
            label: "inferior".to_string(),
            nodes: mesh.nodes_with_tag(side::Z_MIN),
            components: [Some(Ramp::FIXED); 3],
        }],
        forces,
        phase: Vec::new(),
        monitors: vec![ReactionMonitor {
            label: "inferior_z".to_string(),
            set: 0,
            direction: [0.0, 0.0, -1.0],
        }],
        probe: Probe {
            nodes: probe_nodes,
            direction: None,
        },
        motion: spec.motion,
        alpha: spec.alpha,
        f_v: spec.f_v,
    };
    program.validate(mesh.node_count())?;
    Ok((mesh, materials, program))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn slit_duplicates_nodes_and_tags_faces() {
        let m = slit_box_mesh([1.0, 1.0, 0.25], [4, 4, 1], 0.5).unwrap();
        // two nodes per z level at x in {0, 0.25}
        assert_eq!(m.node_count(), 50 + 4);
        // two cells, two triangles per cell face, two crack faces
        let notch = m.facets().iter().filter(|f| f.tag == NOTCH_TAG).count();
        assert_eq!(notch, 8);
        assert_relative_eq!(m.total_volume(), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn sent_programs() {
        let mut spec = SentSpec::new(SentMode::Tension);
        spec.divisions = 8;
        let (mesh, mat, prog) = build_sent(&spec).unwrap();
        assert_eq!(mat.len(), mesh.tet_count());
        let bcs = prog.loads_at(mesh.node_count(), 0.0).unwrap();
        assert!(bcs.displacement.pairs().iter().all(|p| p.1 == 0.0));
        let top = &prog.dirichlet[1];
        let c = prog.constraints_at(prog.n_steps as f64).unwrap();
        let dof = 3 * top.nodes[0] + 1;
        let v = c.pairs().iter().find(|p| p.0 == dof).unwrap().1;
        assert_relative_eq!(v, spec.max_displacement, max_relative = 1e-12);
        spec.notch_length = 0.6;
        assert!(matches!(build_sent(&spec), Err(ScenarioError::NotchLength { .. })));
    }

    #[test]
    fn symmetric_screws_mirror() {
        let spec = VertebraSpec {
            alpha: (-5.0, 0.0),
            ..VertebraSpec::default()
        };
        let [l, r] = spec.screws();
        assert_relative_eq!(l.entry[0], 50.0 - r.entry[0], epsilon = 1e-12);
        assert_relative_eq!(l.axis[0], -r.axis[0], epsilon = 1e-12);
        assert_eq!((l.axis[1], l.axis[2]), (r.axis[1], r.axis[2]));
    }

    #[test]
    fn flexion_extension_differ_by_sign() {
        let spec = VertebraSpec {
            divisions: [10, 10, 6],
            ..VertebraSpec::default()
        };
        let (_, _, flex) = build_vertebra_analog(&spec).unwrap();
        let (_, _, ext) = build_vertebra_analog(&VertebraSpec {
            motion: Motion::Extension,
            ..spec.clone()
        })
        .unwrap();
        assert_eq!(flex.forces[0], ext.forces[0]);
        for (a, b) in flex.forces[1..].iter().zip(&ext.forces[1..]) {
            for (la, lb) in a.loads.iter().zip(&b.loads) {
                assert_eq!(la.node, lb.node);
                for k in 0..3 {
                    assert_eq!(la.per_step[k], -lb.per_step[k]);
                }
            }
        }
    }

    #[test]
    fn torsion_is_a_pure_couple() {
        let spec = VertebraSpec {
            divisions: [10, 10, 6],
            motion: Motion::TorsionCcw,
            ..VertebraSpec::default()
        };
        let (mesh, _, prog) = build_vertebra_analog(&spec).unwrap();
        let mut net = [0.0; 3];
        let mut moment = 0.0;
        let centre = [25.0, 0.0];
        for set in &prog.forces[1..] {
            for l in &set.loads {
                let p = mesh.nodes()[l.node];
                let f = l.per_step;
                for k in 0..3 {
                    net[k] += f[k];
                }
                let r = [p[0] - centre[0], p[1] - centre[1]];
                assert!(libm::fabs(r[0] * f[0] + r[1] * f[1]) < 1e-10);
                assert_eq!(f[2], 0.0);
                moment += r[0] * f[1] - r[1] * f[0];
            }
        }
        assert!(mesh::norm(&net) < 1e-10);
        assert!(moment > 0.0);
    }

    #[test]
    fn steep_screws_rejected() {
        let spec = VertebraSpec {
            divisions: [10, 10, 6],
            entry_z: 25.0,
            alpha: (15.0, 0.0),
            ..VertebraSpec::default()
        };
        assert!(matches!(build_vertebra_analog(&spec), Err(ScenarioError::ScrewExitsBlock { .. })));
    }
}
