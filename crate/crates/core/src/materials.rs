//! Elastic and fracture constants per element, fracture-parameter calibration
//! and the heterogeneous bone/screw field of the vertebra analog.

use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};
use thiserror::Error;

use crate::mesh::{self, Mesh};

/// Default residual stiffness in `g(s) = (1 - s)^2 + k`.
pub const DEFAULT_RESIDUAL_STIFFNESS: f64 = 1e-8;

/// Power-law calibration defaults: `E0` (MPa), `Gc0` (N/mm), exponent.
pub const DEFAULT_E0: f64 = 20_000.0;
pub const DEFAULT_GC0: f64 = 0.01;
pub const DEFAULT_BETA: f64 = 0.8;

/// Titanium screw properties (MPa, -).
pub const SCREW_E: f64 = 110_000.0;
pub const SCREW_NU: f64 = 0.4;
pub const BONE_NU: f64 = 0.3;
/// Modulus ranges (MPa).
pub const CORTICAL_E_RANGE: (f64, f64) = (12_000.0, 14_000.0);
pub const TRABECULAR_E_RANGE: (f64, f64) = (0.0, 3_000.0);
/// Floor applied to sampled trabecular moduli (MPa).
pub const TRABECULAR_E_MIN: f64 = 50.0;
/// Default failure stress used for the length scale (MPa).
pub const DEFAULT_SIGMA_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaterialError {
    #[error("Young's modulus must be positive, got {0}")]
    NonPositiveModulus(f64),
    #[error("Poisson ratio {0} outside (-1, 0.5)")]
    PoissonOutOfRange(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("residual stiffness {0} must satisfy 0 < k < 1")]
    ResidualStiffness(f64),
    #[error("element {element}: {reason}")]
    InvalidElement { element: usize, reason: &'static str },
    #[error("screw {0} does not intersect the mesh")]
    ScrewOutsideMesh(usize),
    #[error("shell thickness {thickness} exceeds half the smallest block width {half_width}")]
    ShellTooThick { thickness: f64, half_width: f64 },
    #[error("material field has {fields} entries for {tets} elements")]
    CountMismatch { fields: usize, tets: usize },
}

/// `(lambda, mu)` from Young's modulus and Poisson's ratio.
pub fn lame_constants(e: f64, nu: f64) -> Result<(f64, f64), MaterialError> {
    if !(e > 0.0) {
        return Err(MaterialError::NonPositiveModulus(e));
    }
    if !(nu > -1.0 && nu < 0.5) {
        return Err(MaterialError::PoissonOutOfRange(nu));
    }
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    Ok((lambda, mu))
}

fn positive(name: &'static str, value: f64) -> Result<f64, MaterialError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(MaterialError::NonPositive { name, value })
    }
}

/// `Gc = Gc0 (E / E0)^beta`
pub fn gc_power_law(e: f64, e0: f64, gc0: f64, beta: f64) -> Result<f64, MaterialError> {
    positive("E", e)?;
    positive("E0", e0)?;
    positive("Gc0", gc0)?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(MaterialError::NonPositive { name: "beta", value: beta });
    }
    Ok(gc0 * libm::pow(e / e0, beta))
}

/// `l = 27/256 * Gc E / sigma_max^2`
pub fn length_scale(e: f64, gc: f64, sigma_max: f64) -> Result<f64, MaterialError> {
    positive("E", e)?;
    positive("Gc", gc)?;
    positive("sigma_max", sigma_max)?;
    Ok(27.0 / 256.0 * (gc * e / (sigma_max * sigma_max)))
}

/// Material class of an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Homogeneous,
    Trabecular,
    Cortical,
    Screw,
}

impl Region {
    pub fn tag(self) -> i32 {
        match self {
            Region::Homogeneous => 0,
            Region::Trabecular => 1,
            Region::Cortical => 2,
            Region::Screw => 3,
        }
    }

    pub fn from_tag(tag: i32) -> Option<Self> {
        match tag {
            0 => Some(Region::Homogeneous),
            1 => Some(Region::Trabecular),
            2 => Some(Region::Cortical),
            3 => Some(Region::Screw),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementMaterial {
    pub e: f64,
    pub nu: f64,
    pub lambda: f64,
    pub mu: f64,
    pub gc: f64,
    pub l: f64,
    pub region: Region,
}

impl ElementMaterial {
    pub fn new(e: f64, nu: f64, gc: f64, l: f64, region: Region) -> Result<Self, MaterialError> {
        let (lambda, mu) = lame_constants(e, nu)?;
        positive("Gc", gc)?;
        positive("l", l)?;
        Ok(Self {
            e,
            nu,
            lambda,
            mu,
            gc,
            l,
            region,
        })
    }
}

/// Per-element constants plus the global residual stiffness `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    elements: Vec<ElementMaterial>,
    k: f64,
}

impl MaterialField {
    pub fn new(elements: Vec<ElementMaterial>, k: f64) -> Result<Self, MaterialError> {
        if !(k > 0.0 && k < 1.0) {
            return Err(MaterialError::ResidualStiffness(k));
        }
        for (i, m) in elements.iter().enumerate() {
            if !(m.e > 0.0) || !(m.nu >= 0.0 && m.nu < 0.5) {
                return Err(MaterialError::InvalidElement {
                    element: i,
                    reason: "requires E > 0 and 0 <= nu < 0.5",
                });
            }
            if !(m.gc > 0.0) || !(m.l > 0.0) {
                return Err(MaterialError::InvalidElement {
                    element: i,
                    reason: "requires Gc > 0 and l > 0",
                });
            }
            let (lambda, mu) = lame_constants(m.e, m.nu).map_err(|_| MaterialError::InvalidElement {
                element: i,
                reason: "invalid elastic constants",
            })?;
            let close = |a: f64, b: f64| libm::fabs(a - b) <= 1e-10 * libm::fabs(b).max(1e-300);
            if !close(m.lambda, lambda) || !close(m.mu, mu) {
                return Err(MaterialError::InvalidElement {
                    element: i,
                    reason: "Lame constants inconsistent with (E, nu)",
                });
            }
        }
        Ok(Self { elements, k })
    }

    pub fn homogeneous(count: usize, e: f64, nu: f64, gc: f64, l: f64, k: f64) -> Result<Self, MaterialError> {
        let m = ElementMaterial::new(e, nu, gc, l, Region::Homogeneous)?;
        Self::new(alloc::vec![m; count], k)
    }

    pub fn elements(&self) -> &[ElementMaterial] {
        &self.elements
    }

    pub fn get(&self, e: usize) -> &ElementMaterial {
        &self.elements[e]
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn residual_stiffness(&self) -> f64 {
        self.k
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<(), MaterialError> {
        if self.elements.len() != mesh.tet_count() {
            return Err(MaterialError::CountMismatch {
                fields: self.elements.len(),
                tets: mesh.tet_count(),
            });
        }
        Ok(())
    }
}

/// Solid cylinder standing in for a pedicle screw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScrewCylinder {
    /// Centre of the screw head cross-section (mm).
    pub entry: [f64; 3],
    /// Unit axis pointing into the bone.
    pub axis: [f64; 3],
    pub radius: f64,
    pub length: f64,
}

impl ScrewCylinder {
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        let d = mesh::sub(p, &self.entry);
        let t = mesh::dot(&d, &self.axis);
        if t < 0.0 || t > self.length {
            return false;
        }
        let radial = [d[0] - t * self.axis[0], d[1] - t * self.axis[1], d[2] - t * self.axis[2]];
        mesh::norm(&radial) <= self.radius
    }

    /// Distance of `p` from the (infinite) axis line.
    pub fn axis_distance(&self, p: &[f64; 3]) -> f64 {
        let d = mesh::sub(p, &self.entry);
        let t = mesh::dot(&d, &self.axis);
        mesh::norm(&[d[0] - t * self.axis[0], d[1] - t * self.axis[1], d[2] - t * self.axis[2]])
    }
}

/// Fracture calibration inputs shared by all bone elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub e0: f64,
    pub gc0: f64,
    pub beta: f64,
    pub sigma_max: f64,
    /// Replaces the calibrated length scale everywhere when set.
    pub length_override: Option<f64>,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            e0: DEFAULT_E0,
            gc0: DEFAULT_GC0,
            beta: DEFAULT_BETA,
            sigma_max: DEFAULT_SIGMA_MAX,
            length_override: None,
        }
    }
}

impl Calibration {
    /// `(Gc, l)` for a given modulus.
    pub fn fracture_constants(&self, e: f64) -> Result<(f64, f64), MaterialError> {
        let gc = gc_power_law(e, self.e0, self.gc0, self.beta)?;
        let l = match self.length_override {
            Some(l) => positive("l", l)?,
            None => length_scale(e, gc, self.sigma_max)?,
        };
        Ok((gc, l))
    }
}

/// Recipe for the bone/screw material field of the vertebra analog.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogSpec {
    pub shell_thickness: f64,
    pub screws: Vec<ScrewCylinder>,
    pub cortical_range: (f64, f64),
    pub trabecular_range: (f64, f64),
    pub trabecular_floor: f64,
    pub calibration: Calibration,
    pub residual_stiffness: f64,
    pub seed: u64,
    /// When set, element moduli are drawn from the position mirrored into
    /// `x <= plane`, so the field is mirror symmetric about `x = plane`.
    pub mirror_plane_x: Option<f64>,
}

impl AnalogSpec {
    pub fn new(shell_thickness: f64, screws: Vec<ScrewCylinder>, seed: u64) -> Self {
        Self {
            shell_thickness,
            screws,
            cortical_range: CORTICAL_E_RANGE,
            trabecular_range: TRABECULAR_E_RANGE,
            trabecular_floor: TRABECULAR_E_MIN,
            calibration: Calibration::default(),
            residual_stiffness: DEFAULT_RESIDUAL_STIFFNESS,
            seed,
            mirror_plane_x: None,
        }
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform sample in `[0, 1)` keyed on the seed and a quantised position.
fn positional_uniform(seed: u64, key: [f64; 3]) -> f64 {
    let mut h = mix64(seed);
    for c in key {
        let q = libm::round(c * 1e6) as i64;
        h = mix64(h ^ q as u64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Classifies each element by centroid (screw, cortical shell, trabecular
/// core) and fills in elastic and fracture constants.
pub fn assign_vertebra_analog(mesh: &Mesh, spec: &AnalogSpec) -> Result<MaterialField, MaterialError> {
    let (lo, hi) = mesh.bounds();
    let half_width = (0..3).map(|k| 0.5 * (hi[k] - lo[k])).fold(f64::INFINITY, f64::min);
    if !(spec.shell_thickness >= 0.0) || spec.shell_thickness > half_width {
        return Err(MaterialError::ShellTooThick {
            thickness: spec.shell_thickness,
            half_width,
        });
    }
    let mut screw_hits = alloc::vec![false; spec.screws.len()];
    let mut out = Vec::with_capacity(mesh.tet_count());
    for e in 0..mesh.tet_count() {
        let c = mesh.centroid(e);
        if let Some(i) = spec.screws.iter().position(|s| s.contains(&c)) {
            screw_hits[i] = true;
            let (gc, l) = spec.calibration.fracture_constants(SCREW_E)?;
            out.push(ElementMaterial::new(SCREW_E, SCREW_NU, gc, l, Region::Screw)?);
            continue;
        }
        let wall = (0..3)
            .map(|k| (c[k] - lo[k]).min(hi[k] - c[k]))
            .fold(f64::INFINITY, f64::min);
        let (region, (a, b)) = if wall < spec.shell_thickness {
            (Region::Cortical, spec.cortical_range)
        } else {
            (Region::Trabecular, spec.trabecular_range)
        };
        let key = match spec.mirror_plane_x {
            Some(x0) => [libm::fabs(c[0] - x0), c[1], c[2]],
            None => c,
        };
        let u = positional_uniform(spec.seed, key);
        let mut modulus = a + (b - a) * (1.0 - u);
        if region == Region::Trabecular {
            modulus = modulus.max(spec.trabecular_floor);
        }
        let (gc, l) = spec.calibration.fracture_constants(modulus)?;
        out.push(ElementMaterial::new(modulus, BONE_NU, gc, l, region)?);
    }
    if let Some(i) = screw_hits.iter().position(|&h| !h) {
        return Err(MaterialError::ScrewOutsideMesh(i));
    }
    MaterialField::new(out, spec.residual_stiffness)
}
