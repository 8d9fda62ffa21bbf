//! Scene description: pinhole camera, analytic SDF primitives, materials and
//! an unpolarized environment light, plus sphere tracing over their union.
//!
//! Scenes are read from strict JSON (unknown keys are rejected):
//!
//! ```json
//! {
//!   "camera": {"position": [0, 0, 4], "look_at": [0, 0, 0], "up": [0, 1, 0],
//!              "vertical_fov": 40, "width": 64, "height": 64},
//!   "primitives": [{"type": "sphere", "center": [0, 0, 0], "radius": 1, "material": 0}],
//!   "materials": [{"m": 0, "roughness": 0.2, "ks": 1.0,
//!                  "eta": [0.2, 0.4, 1.3], "k": [3.4, 2.4, 1.8]}],
//!   "env": {"ambient": [0.2, 0.2, 0.2],
//!           "suns": [{"direction": [1, 1, 1], "angular_radius": 15, "radiance": [5, 5, 5]}]},
//!   "sampling": {"hemisphere_samples": 128, "seed": 0}
//! }
//! ```
//!
//! Angles are in degrees, lengths in meters, radiance is linear.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fresnel::ComplexIor;
use crate::math::Vec3;
use crate::pbrdf::{Indicator, MaterialParams, DIELECTRIC_ETA};
use crate::polcore::Frame;

pub const HIT_TOLERANCE: f64 = 1e-4;
pub const MAX_TRACE_STEPS: usize = 512;
pub const MAX_TRACE_DISTANCE: f64 = 100.0;
pub const NORMAL_STEP: f64 = 1e-5;
const REFINE_TOLERANCE: f64 = 1e-8;
pub const MIN_HEMISPHERE_SAMPLES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown key at line {line}, column {column}: {message}")]
    UnknownKey { line: usize, column: usize, message: String },
    #[error("schema error at line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("scene file is not valid UTF-8: {0}")]
    Encoding(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is not on the surface (sdf = {0:e})")]
    NotOnSurface(f64),
    #[error("SDF gradient vanishes at {0:?}")]
    DegenerateGradient(Vec3),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Degrees.
    pub vertical_fov: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.vertical_fov > 0.0 && self.vertical_fov < 180.0) {
            return Err(SceneError::Invalid(format!("camera vertical_fov {} not in (0,180)", self.vertical_fov)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::Invalid("camera width and height must be >= 1".into()));
        }
        let view = self.look_at - self.position;
        if !(self.position.is_finite() && self.look_at.is_finite() && self.up.is_finite()) {
            return Err(SceneError::Invalid("camera vectors must be finite".into()));
        }
        if view.try_normalize(1e-12).is_none() {
            return Err(SceneError::Invalid("camera position equals look_at".into()));
        }
        if view.normalize().cross(self.up).try_normalize(1e-9).is_none() {
            return Err(SceneError::Invalid("camera up is parallel to the view direction".into()));
        }
        Ok(())
    }

    /// `(forward, right, up)` orthonormal camera basis.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let f = (self.look_at - self.position).normalize();
        let r = f.cross(self.up).normalize();
        let u = r.cross(f);
        (f, r, u)
    }

    /// Unit direction of the ray through the centre of pixel `(px, py)`;
    /// `py = 0` is the top row.
    pub fn ray_direction(&self, px: usize, py: usize) -> Vec3 {
        let (f, r, u) = self.basis();
        let tan_half = (0.5 * self.vertical_fov.to_radians()).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * (px as f64 + 0.5) / self.width as f64 - 1.0) * tan_half * aspect;
        let sy = (1.0 - 2.0 * (py as f64 + 0.5) / self.height as f64) * tan_half;
        (f + r * sx + u * sy).normalize()
    }

    /// Polarization reference frame of light arriving along a camera ray:
    /// the image "right" direction projected orthogonal to the ray.
    pub fn pixel_frame(&self, ray_dir: Vec3) -> Frame {
        let (_, r, _) = self.basis();
        Frame::from_hint(-ray_dir, r)
    }

    /// This camera rotated by `angle` about the unit `axis` through `pivot`,
    /// looking at `pivot`.
    pub fn orbit(&self, pivot: Vec3, axis: Vec3, angle: f64) -> Camera {
        let mut cam = *self;
        cam.position = pivot + (self.position - pivot).rotate_about(axis, angle);
        cam.look_at = pivot;
        cam
    }

    /// `n` cameras on a circle about the `up` axis through the origin, all
    /// looking at the origin; the first keeps this camera's position.
    pub fn orbit_views(&self, n: usize) -> Vec<Camera> {
        let axis = self.up.normalize();
        (0..n)
            .map(|i| self.orbit(Vec3::ZERO, axis, 2.0 * std::f64::consts::PI * i as f64 / n as f64))
            .collect()
    }

    /// Rolls the camera by `angle` about the light propagation direction of
    /// the central ray (i.e. about `−forward`).
    pub fn rolled(&self, angle: f64) -> Camera {
        let (f, _, u) = self.basis();
        let mut cam = *self;
        cam.up = u.rotate_about(-f, angle);
        cam
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Plane { point: Vec3, normal: Vec3 },
    Box { center: Vec3, half_extents: Vec3 },
}

impl Shape {
    #[inline]
    pub fn sdf(&self, x: Vec3) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => (x - center).length() - radius,
            Shape::Plane { point, normal } => (x - point).dot(normal),
            Shape::Box { center, half_extents } => {
                let q = (x - center).abs() - half_extents;
                q.max(Vec3::ZERO).length() + q.max_element().min(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub material_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sun {
    pub direction: Vec3,
    /// Radians.
    pub angular_radius: f64,
    pub radiance: [f64; 3],
    cos_radius: f64,
}

impl Sun {
    pub fn new(direction: Vec3, angular_radius: f64, radiance: [f64; 3]) -> Self {
        Sun { direction: direction.normalize(), angular_radius, radiance, cos_radius: angular_radius.cos() }
    }

    pub fn contains(&self, dir: Vec3) -> bool {
        dir.dot(self.direction) >= self.cos_radius
    }
}

/// Unpolarized distant lighting: constant ambient plus sun discs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvLight {
    pub ambient: [f64; 3],
    pub suns: Vec<Sun>,
}

impl EnvLight {
    /// Radiance arriving from direction `dir` (pointing towards the light).
    pub fn radiance(&self, dir: Vec3) -> [f64; 3] {
        let mut l = self.ambient;
        for sun in &self.suns {
            if sun.contains(dir) {
                for (c, v) in l.iter_mut().enumerate() {
                    *v += sun.radiance[c];
                }
            }
        }
        l
    }

    pub fn scaled(&self, gamma: f64) -> EnvLight {
        EnvLight {
            ambient: self.ambient.map(|a| a * gamma),
            suns: self
                .suns
                .iter()
                .map(|s| Sun::new(s.direction, s.angular_radius, s.radiance.map(|r| r * gamma)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub position: Vec3,
    pub normal: Vec3,
    pub material_id: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub camera: Camera,
    pub primitives: Vec<Primitive>,
    pub materials: Vec<MaterialParams>,
    pub env: EnvLight,
    pub hemisphere_samples: usize,
    pub seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.camera.validate()?;
        for (i, p) in self.primitives.iter().enumerate() {
            if p.material_id >= self.materials.len() {
                return Err(SceneError::Invalid(format!(
                    "primitive {i} references material {} but only {} materials exist",
                    p.material_id,
                    self.materials.len()
                )));
            }
            let ok = match p.shape {
                Shape::Sphere { center, radius } => center.is_finite() && radius > 0.0 && radius.is_finite(),
                Shape::Plane { point, normal } => point.is_finite() && (normal.length() - 1.0).abs() < 1e-9,
                Shape::Box { center, half_extents } => {
                    center.is_finite() && half_extents.is_finite() && [0, 1, 2].iter().all(|&a| half_extents[a] > 0.0)
                }
            };
            if !ok {
                return Err(SceneError::Invalid(format!("primitive {i} has invalid dimensions")));
            }
        }
        for (i, m) in self.materials.iter().enumerate() {
            m.validate().map_err(|e| SceneError::Invalid(format!("material {i}: {e}")))?;
        }
        if !self.env.ambient.iter().all(|a| *a >= 0.0 && a.is_finite()) {
            return Err(SceneError::Invalid("env ambient must be >= 0".into()));
        }
        for (i, s) in self.env.suns.iter().enumerate() {
            if !(s.angular_radius > 0.0 && s.angular_radius < std::f64::consts::FRAC_PI_2) {
                return Err(SceneError::Invalid(format!("sun {i} angular_radius must be in (0, 90) degrees")));
            }
            if !s.radiance.iter().all(|r| *r >= 0.0 && r.is_finite()) {
                return Err(SceneError::Invalid(format!("sun {i} radiance must be >= 0")));
            }
            if !s.direction.is_finite() {
                return Err(SceneError::Invalid(format!("sun {i} direction must be finite and nonzero")));
            }
        }
        if self.hemisphere_samples < MIN_HEMISPHERE_SAMPLES {
            return Err(SceneError::Invalid(format!(
                "hemisphere_samples must be >= {MIN_HEMISPHERE_SAMPLES}"
            )));
        }
        Ok(())
    }

    pub fn with_camera(&self, camera: Camera) -> Scene {
        Scene { camera, ..self.clone() }
    }

    pub fn with_env_scale(&self, gamma: f64) -> Scene {
        Scene { env: self.env.scaled(gamma), ..self.clone() }
    }

    /// Signed distance to the union of all primitives; `+∞` for an empty scene.
    #[inline]
    pub fn sdf(&self, x: Vec3) -> f64 {
        self.primitives.iter().map(|p| p.shape.sdf(x)).fold(f64::INFINITY, f64::min)
    }

    fn closest(&self, x: Vec3) -> Option<(f64, &Primitive)> {
        self.primitives
            .iter()
            .map(|p| (p.shape.sdf(x), p))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Normalized central-difference gradient of the SDF at a surface point.
    pub fn normal(&self, x: Vec3) -> Result<Vec3, GeometryError> {
        let d = self.sdf(x);
        if !(d.abs() < HIT_TOLERANCE) {
            return Err(GeometryError::NotOnSurface(d));
        }
        self.gradient_normal(x)
    }

    fn gradient_normal(&self, x: Vec3) -> Result<Vec3, GeometryError> {
        let h = NORMAL_STEP;
        let g = Vec3::new(
            self.sdf(x + Vec3::X * h) - self.sdf(x - Vec3::X * h),
            self.sdf(x + Vec3::Y * h) - self.sdf(x - Vec3::Y * h),
            self.sdf(x + Vec3::Z * h) - self.sdf(x - Vec3::Z * h),
        );
        g.try_normalize(1e-300).ok_or(GeometryError::DegenerateGradient(x))
    }

    /// First surface crossing along the ray, or `None` on a miss.
    pub fn sphere_trace(&self, origin: Vec3, direction: Vec3) -> Option<Hit> {
        let mut t = 0.0;
        for _ in 0..MAX_TRACE_STEPS {
            let p = origin + direction * t;
            let (dist, prim) = self.closest(p)?;
            if dist < HIT_TOLERANCE {
                let (t, material_id) = self.refine(origin, direction, t, dist, prim.material_id);
                let p = origin + direction * t;
                let normal = self.gradient_normal(p).unwrap_or(-direction);
                return Some(Hit { position: p, normal, material_id, t });
            }
            t += dist;
            if t > MAX_TRACE_DISTANCE {
                return None;
            }
        }
        None
    }

    /// Keeps marching past the tolerance shell so grazing hits land close to
    /// the true crossing; stops as soon as the distance stops shrinking.
    fn refine(&self, origin: Vec3, direction: Vec3, mut t: f64, mut dist: f64, mut id: usize) -> (f64, usize) {
        for _ in 0..MAX_TRACE_STEPS {
            if dist <= REFINE_TOLERANCE {
                break;
            }
            let next_t = t + dist;
            let Some((d, prim)) = self.closest(origin + direction * next_t) else { break };
            if d >= dist {
                break;
            }
            t = next_t;
            dist = d;
            id = prim.material_id;
        }
        (t, id)
    }

    /// True when the ray reaches the environment unobstructed.
    pub fn visible(&self, origin: Vec3, direction: Vec3) -> bool {
        self.sphere_trace(origin, direction).is_none()
    }

    /// The first sphere primitive, if any.
    pub fn first_sphere_mut(&mut self) -> Option<(&mut Vec3, &mut f64)> {
        self.primitives.iter_mut().find_map(|p| match &mut p.shape {
            Shape::Sphere { center, radius } => Some((center, radius)),
            _ => None,
        })
    }
}

// ---- file schema ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    camera: Camera,
    primitives: Vec<PrimitiveFile>,
    materials: Vec<MaterialFile>,
    env: EnvFile,
    #[serde(default)]
    sampling: SamplingFile,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum PrimitiveFile {
    Sphere { center: Vec3, radius: f64, material: usize },
    Plane { point: Vec3, normal: Vec3, material: usize },
    Box { center: Vec3, half_extents: Vec3, material: usize },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialFile {
    #[serde(default)]
    #[allow(dead_code)]
    name: Option<String>,
    m: u8,
    #[serde(default)]
    albedo: Option<[f64; 3]>,
    roughness: f64,
    #[serde(default = "default_ks")]
    ks: f64,
    #[serde(default)]
    eta: Option<[f64; 3]>,
    #[serde(default)]
    k: Option<[f64; 3]>,
}

fn default_ks() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvFile {
    ambient: [f64; 3],
    #[serde(default)]
    suns: Vec<SunFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SunFile {
    direction: Vec3,
    /// Degrees.
    angular_radius: f64,
    radiance: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplingFile {
    #[serde(default = "default_samples")]
    hemisphere_samples: usize,
    #[serde(default)]
    seed: u64,
}

fn default_samples() -> usize {
    128
}

impl Default for SamplingFile {
    fn default() -> Self {
        SamplingFile { hemisphere_samples: default_samples(), seed: 0 }
    }
}

fn material_from_file(i: usize, f: MaterialFile) -> Result<MaterialParams, SceneError> {
    let invalid = |msg: String| SceneError::Invalid(format!("material {i}: {msg}"));
    let m = Indicator::from_value(f.m).ok_or_else(|| invalid(format!("m must be 0 or 1 (got {})", f.m)))?;
    let ior = match m {
        Indicator::Dielectric => {
            let k = f.k.unwrap_or([0.0; 3]);
            if k.iter().any(|&v| v != 0.0) {
                return Err(invalid(format!("dielectric must have k=0 (got k={k:?})")));
            }
            let eta = f.eta.unwrap_or([DIELECTRIC_ETA; 3]);
            ComplexIor::new(eta, k).map_err(|e| invalid(e.to_string()))?
        }
        Indicator::Conductor => {
            let eta = f.eta.ok_or_else(|| invalid("conductor requires eta".into()))?;
            let k = f.k.ok_or_else(|| invalid("conductor requires k".into()))?;
            ComplexIor::new(eta, k).map_err(|e| invalid(e.to_string()))?
        }
    };
    let albedo = match (m, f.albedo) {
        (_, Some(a)) => a,
        (Indicator::Conductor, None) => [0.0; 3],
        (Indicator::Dielectric, None) => return Err(invalid("dielectric requires albedo".into())),
    };
    let params = MaterialParams { m, albedo, roughness: f.roughness, ks: f.ks, ior };
    params.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(params)
}

fn unit(v: Vec3, what: &str) -> Result<Vec3, SceneError> {
    v.try_normalize(1e-12)
        .filter(|u| u.is_finite())
        .ok_or_else(|| SceneError::Invalid(format!("{what} must be a nonzero finite vector")))
}

fn json_error(e: serde_json::Error) -> SceneError {
    use serde_json::error::Category;
    let (line, column, message) = (e.line(), e.column(), e.to_string());
    match e.classify() {
        Category::Data if message.starts_with("unknown field") || message.starts_with("unknown variant") => {
            SceneError::UnknownKey { line, column, message }
        }
        Category::Data => SceneError::Schema { line, column, message },
        _ => SceneError::Syntax { line, column, message },
    }
}

/// Parses and validates a scene file.
pub fn parse_scene(text: &str) -> Result<Scene, SceneError> {
    let file: SceneFile = serde_json::from_str(text).map_err(json_error)?;
    let materials = file
        .materials
        .into_iter()
        .enumerate()
        .map(|(i, m)| material_from_file(i, m))
        .collect::<Result<Vec<_>, _>>()?;
    let primitives = file
        .primitives
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(match p {
                PrimitiveFile::Sphere { center, radius, material } => {
                    Primitive { shape: Shape::Sphere { center, radius }, material_id: material }
                }
                PrimitiveFile::Plane { point, normal, material } => Primitive {
                    shape: Shape::Plane { point, normal: unit(normal, &format!("primitive {i} normal"))? },
                    material_id: material,
                },
                PrimitiveFile::Box { center, half_extents, material } => {
                    Primitive { shape: Shape::Box { center, half_extents }, material_id: material }
                }
            })
        })
        .collect::<Result<Vec<_>, SceneError>>()?;
    let suns = file
        .env
        .suns
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(Sun::new(unit(s.direction, &format!("sun {i} direction"))?, s.angular_radius.to_radians(), s.radiance))
        })
        .collect::<Result<Vec<_>, SceneError>>()?;
    let scene = Scene {
        camera: file.camera,
        primitives,
        materials,
        env: EnvLight { ambient: file.env.ambient, suns },
        hemisphere_samples: file.sampling.hemisphere_samples,
        seed: file.sampling.seed,
    };
    scene.validate()?;
    Ok(scene)
}

/// Byte-level entry point: rejects invalid UTF-8 before parsing.
pub fn parse_scene_bytes(bytes: &[u8]) -> Result<Scene, SceneError> {
    let text = std::str::from_utf8(bytes).map_err(|e| SceneError::Encoding(e.to_string()))?;
    parse_scene(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const MINIMAL: &str = r#"{
        "camera": {"position": [0, 0, 4], "look_at": [0, 0, 0], "up": [0, 1, 0],
                   "vertical_fov": 40, "width": 8, "height": 8},
        "primitives": [{"type": "sphere", "center": [0, 0, 0], "radius": 1, "material": 0}],
        "materials": [{"m": 1, "albedo": [0.5, 0.5, 0.5], "roughness": 0.3}],
        "env": {"ambient": [1, 1, 1]}
    }"#;

    fn unit_sphere() -> Scene {
        parse_scene(MINIMAL).unwrap()
    }

    #[test]
    fn parses_minimal_scene() {
        let s = unit_sphere();
        assert_eq!(s.primitives.len(), 1);
        assert_eq!(s.hemisphere_samples, 128);
        assert_eq!(s.materials[0].m, Indicator::Dielectric);
        assert_eq!(s.materials[0].ior.eta, [1.5; 3]);
        assert_eq!(s.materials[0].ks, 1.0);
    }

    #[test]
    fn rejects_absorbing_dielectric() {
        let text = MINIMAL.replace(r#""roughness": 0.3"#, r#""roughness": 0.3, "k": [3.4, 3.4, 3.4]"#);
        let err = parse_scene(&text).unwrap_err();
        assert!(matches!(err, SceneError::Invalid(_)));
        assert!(err.to_string().contains("dielectric must have k=0"), "{err}");
    }

    #[test]
    fn shared_material_is_valid() {
        let text = MINIMAL.replace(
            r#""primitives": ["#,
            r#""primitives": [{"type": "box", "center": [3, 0, 0], "half_extents": [1, 1, 1], "material": 0},"#,
        );
        assert_eq!(parse_scene(&text).unwrap().primitives.len(), 2);
    }

    #[test]
    fn distinct_diagnostics() {
        assert!(matches!(parse_scene("{ \"camera\": "), Err(SceneError::Syntax { .. })));
        assert!(matches!(parse_scene("{]"), Err(SceneError::Syntax { line: 1, column: 2, .. })));
        let unknown = MINIMAL.replace(r#""roughness": 0.3"#, r#""roughness": 0.3, "gloss": 1"#);
        assert!(matches!(parse_scene(&unknown), Err(SceneError::UnknownKey { .. })));
        let unknown_prim = MINIMAL.replace(r#""radius": 1,"#, r#""radius": 1, "color": 2,"#);
        assert!(matches!(parse_scene(&unknown_prim), Err(SceneError::UnknownKey { .. })));
        let wrong_type = MINIMAL.replace(r#""radius": 1"#, r#""radius": "big""#);
        assert!(matches!(parse_scene(&wrong_type), Err(SceneError::Schema { .. })));
        let bad_ref = MINIMAL.replace(r#""material": 0"#, r#""material": 3"#);
        assert!(matches!(parse_scene(&bad_ref), Err(SceneError::Invalid(_))));
        let bad_m = MINIMAL.replace(r#""m": 1"#, r#""m": 2"#);
        assert!(matches!(parse_scene(&bad_m), Err(SceneError::Invalid(_))));
        let few = MINIMAL.replace(r#""env": {"ambient": [1, 1, 1]}"#, r#""env": {"ambient": [1, 1, 1]}, "sampling": {"hemisphere_samples": 2}"#);
        assert!(matches!(parse_scene(&few), Err(SceneError::Invalid(_))));
        let fov = MINIMAL.replace(r#""vertical_fov": 40"#, r#""vertical_fov": 180"#);
        assert!(matches!(parse_scene(&fov), Err(SceneError::Invalid(_))));
        assert!(matches!(parse_scene_bytes(&[0xff, 0xfe]), Err(SceneError::Encoding(_))));
    }

    #[test]
    fn sdf_values() {
        let s = unit_sphere();
        assert_eq!(s.sdf(Vec3::new(0.0, 0.0, 2.0)), 1.0);
        assert_eq!(s.sdf(Vec3::ZERO), -1.0);
        let mut u = s.clone();
        u.primitives.push(Primitive {
            shape: Shape::Plane { point: Vec3::new(0.0, -1.5, 0.0), normal: Vec3::Y },
            material_id: 0,
        });
        for p in [Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, -1.2, 0.0), Vec3::new(3.0, 5.0, 1.0)] {
            let expected = (p.length() - 1.0).min(p.y + 1.5);
            assert_eq!(u.sdf(p), expected);
        }
        let b = Shape::Box { center: Vec3::ZERO, half_extents: Vec3::new(1.0, 2.0, 3.0) };
        assert_eq!(b.sdf(Vec3::new(2.0, 0.0, 0.0)), 1.0);
        assert_eq!(b.sdf(Vec3::ZERO), -1.0);
        assert!((b.sdf(Vec3::new(2.0, 3.0, 0.0)) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn normals() {
        let s = unit_sphere();
        assert!((s.normal(Vec3::Z).unwrap() - Vec3::Z).length() < 1e-4);
        assert!(matches!(s.normal(Vec3::new(0.0, 0.0, 1.5)), Err(GeometryError::NotOnSurface(_))));
        let mut p = s.clone();
        p.primitives = vec![Primitive { shape: Shape::Plane { point: Vec3::ZERO, normal: Vec3::Y }, material_id: 0 }];
        for x in [Vec3::new(3.0, 0.0, -2.0), Vec3::new(-10.0, 0.0, 7.0)] {
            assert!((p.normal(x).unwrap() - Vec3::Y).length() < 1e-9);
        }
    }

    #[test]
    fn tracing() {
        let s = unit_sphere();
        let hit = s.sphere_trace(Vec3::new(0.0, 0.0, 3.0), -Vec3::Z).unwrap();
        assert!((hit.position - Vec3::Z).length() < HIT_TOLERANCE);
        assert_eq!(hit.material_id, 0);
        assert!(s.sphere_trace(Vec3::new(0.0, 0.0, 3.0), Vec3::Z).is_none());
        // grazing ray at 0.999 r against the quadratic-formula intersection
        let origin = Vec3::new(0.999, 0.0, 5.0);
        let hit = s.sphere_trace(origin, -Vec3::Z).unwrap();
        let z = (1.0f64 - 0.999 * 0.999).sqrt();
        assert!((hit.position - Vec3::new(0.999, 0.0, z)).length() < 1e-3);
        let empty = Scene { primitives: vec![], ..s };
        assert!(empty.sphere_trace(Vec3::ZERO, Vec3::Z).is_none());
    }

    #[test]
    fn env_radiance() {
        let env = EnvLight {
            ambient: [0.1, 0.2, 0.3],
            suns: vec![Sun::new(Vec3::Z, 0.1, [5.0, 6.0, 7.0])],
        };
        assert_eq!(env.radiance(Vec3::Z), [5.1, 6.2, 7.3]);
        assert_eq!(env.radiance(Vec3::X), [0.1, 0.2, 0.3]);
        assert_eq!(env.scaled(2.0).radiance(Vec3::X), [0.2, 0.4, 0.6]);
    }

    #[test]
    fn camera_rays() {
        let cam = Camera {
            position: Vec3::new(0.0, 0.0, 4.0),
            look_at: Vec3::ZERO,
            up: Vec3::Y,
            vertical_fov: 40.0,
            width: 5,
            height: 5,
        };
        assert!((cam.ray_direction(2, 2) - (-Vec3::Z)).length() < 1e-15);
        // top-left pixel points up and left
        let d = cam.ray_direction(0, 0);
        assert!(d.x < 0.0 && d.y > 0.0);
        let f = cam.pixel_frame(d);
        assert!(Frame::new(f.d, f.x).is_ok());
        let rolled = cam.rolled(0.3);
        let (f0, r0, _) = cam.basis();
        let (f1, r1, _) = rolled.basis();
        assert!((f0 - f1).length() < 1e-15);
        assert!((r0.rotate_about(-f0, 0.3) - r1).length() < 1e-12);
        let mut bad = cam;
        bad.up = Vec3::Z;
        assert!(bad.validate().is_err());
    }

    fn point() -> impl Strategy<Value = Vec3> {
        (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn sdf_is_lipschitz(a in point(), b in point()) {
            let mut s = unit_sphere();
            s.primitives.push(Primitive { shape: Shape::Plane { point: Vec3::new(0.0, -1.0, 0.0), normal: Vec3::Y }, material_id: 0 });
            s.primitives.push(Primitive { shape: Shape::Box { center: Vec3::new(2.0, 0.0, 0.0), half_extents: Vec3::new(0.5, 1.0, 0.3) }, material_id: 0 });
            prop_assert!((s.sdf(a) - s.sdf(b)).abs() <= (a - b).length() + 1e-9);
        }

        #[test]
        fn sphere_normals_match_analytic(theta in 0.0f64..std::f64::consts::PI, phi in -3.1f64..3.1, r in 0.2f64..3.0) {
            let mut s = unit_sphere();
            let c = Vec3::new(0.3, -0.2, 0.5);
            s.primitives[0].shape = Shape::Sphere { center: c, radius: r };
            let n = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let got = s.normal(c + n * r).unwrap();
            prop_assert!((got - n).length() < 1e-4);
        }

        #[test]
        fn trace_hits_are_on_surface(ox in -0.9f64..0.9, oy in -0.9f64..0.9) {
            let s = unit_sphere();
            if let Some(hit) = s.sphere_trace(Vec3::new(ox, oy, 4.0), -Vec3::Z) {
                prop_assert!(s.sdf(hit.position).abs() <= 2.0 * HIT_TOLERANCE);
            }
        }

        #[test]
        fn parser_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_scene_bytes(&bytes);
        }

        #[test]
        fn parser_survives_mutations(pos in 0usize..400, byte in any::<u8>()) {
            let mut b = MINIMAL.as_bytes().to_vec();
            let i = pos % b.len();
            b[i] = byte;
            let _ = parse_scene_bytes(&b);
        }
    }
}
