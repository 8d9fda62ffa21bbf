//! Polarimetric BRDF for conductors and dielectrics.
//!
//! Reflection is split into a depolarizing diffuse term
//!
//! ```text
//! M_dif = (a/π) cos θi · F^T(θo) · D · F^T(θi)
//! ```
//!
//! and a microfacet specular term
//!
//! ```text
//! M_spec = k_s · D_ggx(θh) G / (4 cos θo) · F^R(n, θd)
//! ```
//!
//! where `θd` is the angle between the incident direction and the half-vector.
//! The diffuse term is multiplied by the binary indicator `m` (0 for
//! conductors, 1 for dielectrics): conductors are opaque and have no
//! subsurface scattering. Diffuse transmission always uses a real index of
//! 1.5; the specular Fresnel term uses the material's complex index per
//! colour channel.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::fresnel::{ComplexIor, ReflectionTerms, TransmissionTerms};
use crate::math::Vec3;
use crate::polcore::{Frame, MuellerMatrix};

/// Index of refraction assumed for every dielectric.
pub const DIELECTRIC_ETA: f64 = 1.5;
pub const MIN_ROUGHNESS: f64 = 1e-3;
/// `cos θo` at or below this yields a zero specular term.
pub const GRAZING_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("dielectric must have k=0 (got k={0:?})")]
    DielectricAbsorption([f64; 3]),
    #[error("dielectric must have eta=1.5 (got eta={0:?})")]
    DielectricEta([f64; 3]),
    #[error("albedo must lie in [0,1] (got {0:?})")]
    Albedo([f64; 3]),
    #[error("roughness must lie in (0,1] (got {0})")]
    Roughness(f64),
    #[error("ks must be finite and >= 0 (got {0})")]
    Ks(f64),
    #[error(transparent)]
    Ior(#[from] crate::fresnel::FresnelError),
}

/// Binary conductor/dielectric indicator `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Indicator {
    Conductor = 0,
    Dielectric = 1,
}

impl Indicator {
    pub fn from_value(m: u8) -> Option<Self> {
        match m {
            0 => Some(Indicator::Conductor),
            1 => Some(Indicator::Dielectric),
            _ => None,
        }
    }

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn is_conductor(self) -> bool {
        self == Indicator::Conductor
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    pub m: Indicator,
    pub albedo: [f64; 3],
    pub roughness: f64,
    pub ks: f64,
    pub ior: ComplexIor,
}

impl MaterialParams {
    pub fn conductor(roughness: f64, ks: f64, ior: ComplexIor) -> Self {
        MaterialParams { m: Indicator::Conductor, albedo: [0.0; 3], roughness, ks, ior }
    }

    pub fn dielectric(albedo: [f64; 3], roughness: f64, ks: f64) -> Self {
        MaterialParams {
            m: Indicator::Dielectric,
            albedo,
            roughness,
            ks,
            ior: ComplexIor::dielectric(DIELECTRIC_ETA),
        }
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        ComplexIor::new(self.ior.eta, self.ior.k)?;
        if self.m == Indicator::Dielectric {
            if !self.ior.is_dielectric() {
                return Err(MaterialError::DielectricAbsorption(self.ior.k));
            }
            if self.ior.eta != [DIELECTRIC_ETA; 3] {
                return Err(MaterialError::DielectricEta(self.ior.eta));
            }
        }
        if !self.albedo.iter().all(|a| (0.0..=1.0).contains(a)) {
            return Err(MaterialError::Albedo(self.albedo));
        }
        if !(self.roughness > 0.0 && self.roughness <= 1.0) {
            return Err(MaterialError::Roughness(self.roughness));
        }
        if !(self.ks >= 0.0 && self.ks.is_finite()) {
            return Err(MaterialError::Ks(self.ks));
        }
        Ok(())
    }

    /// GGX width; roughness is used directly, clamped from below.
    pub fn alpha(&self) -> f64 {
        self.roughness.max(MIN_ROUGHNESS)
    }
}

/// Local shading configuration. All vectors are unit length; `wi` points
/// towards the light and `wo` towards the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadingGeometry {
    pub n: Vec3,
    pub wi: Vec3,
    pub wo: Vec3,
    pub h: Vec3,
}

impl ShadingGeometry {
    /// Builds the geometry; `h` falls back to `n` when `wi = −wo`.
    pub fn new(n: Vec3, wi: Vec3, wo: Vec3) -> Self {
        let h = (wi + wo).try_normalize(1e-12).unwrap_or(n);
        ShadingGeometry { n, wi, wo, h }
    }

    pub fn angles(&self) -> ShadingAngles {
        let degenerate = (self.wi + self.wo).length_squared() < 1e-24;
        ShadingAngles {
            cos_i: self.n.dot(self.wi),
            cos_o: self.n.dot(self.wo),
            cos_h: self.n.dot(self.h).clamp(0.0, 1.0),
            cos_d: self.wi.dot(self.h).clamp(0.0, 1.0),
            degenerate_half: degenerate,
        }
    }
}

/// Cosines derived from a [`ShadingGeometry`]; everything the Mueller terms
/// depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadingAngles {
    pub cos_i: f64,
    pub cos_o: f64,
    pub cos_h: f64,
    pub cos_d: f64,
    pub degenerate_half: bool,
}

/// GGX normal distribution.
#[inline]
pub fn ggx_d(cos_theta_h: f64, roughness: f64) -> f64 {
    let a2 = roughness * roughness;
    let c2 = cos_theta_h * cos_theta_h;
    let denom = c2 * (a2 - 1.0) + 1.0;
    a2 / (PI * denom * denom)
}

/// Smith–GGX masking for one direction with `cos θ > 0`.
#[inline]
pub fn smith_g1(cos_theta: f64, roughness: f64) -> f64 {
    if cos_theta <= 0.0 {
        return 0.0;
    }
    let a2 = roughness * roughness;
    2.0 * cos_theta / (cos_theta + (a2 + (1.0 - a2) * cos_theta * cos_theta).sqrt())
}

/// Separable Smith shadowing-masking `G1(wi) · G1(wo)`.
pub fn smith_g(geom: &ShadingGeometry, roughness: f64) -> f64 {
    let a = geom.angles();
    smith_g_angles(&a, roughness)
}

#[inline]
fn smith_g_angles(a: &ShadingAngles, roughness: f64) -> f64 {
    // a back-facing microfacet cannot be seen or lit
    if a.cos_d <= 0.0 {
        return 0.0;
    }
    smith_g1(a.cos_i, roughness) * smith_g1(a.cos_o, roughness)
}

/// Scalar factor `k_s D G / (4 cos θo)` of the specular term, 0 when the
/// configuration is invalid.
#[inline]
pub(crate) fn specular_scale(params: &MaterialParams, a: &ShadingAngles) -> f64 {
    if a.cos_o <= GRAZING_EPSILON || a.cos_i <= 0.0 || a.degenerate_half || params.ks == 0.0 {
        return 0.0;
    }
    let alpha = params.alpha();
    params.ks * ggx_d(a.cos_h, alpha) * smith_g_angles(a, alpha) / (4.0 * a.cos_o)
}

/// Transmission terms at the incident and exitant angles, `None` when
/// either direction is below the surface.
#[inline]
pub(crate) fn diffuse_transmission(a: &ShadingAngles) -> Option<(TransmissionTerms, TransmissionTerms)> {
    if a.cos_i <= 0.0 || a.cos_o <= 0.0 {
        return None;
    }
    Some((
        TransmissionTerms::from_cos(DIELECTRIC_ETA, a.cos_i),
        TransmissionTerms::from_cos(DIELECTRIC_ETA, a.cos_o),
    ))
}

/// `F^T_o · D · F^T_i` as an outer product of the first column of `F^T_o`
/// and the first row of `F^T_i`.
#[inline]
fn diffuse_core(ti: &TransmissionTerms, to: &TransmissionTerms) -> MuellerMatrix {
    let col = [to.t_plus, to.t_minus, 0.0];
    let row = [ti.t_plus, ti.t_minus, 0.0];
    let mut m = [[0.0; 3]; 3];
    for (r, out) in m.iter_mut().enumerate() {
        for (c, v) in out.iter_mut().enumerate() {
            *v = col[r] * row[c];
        }
    }
    MuellerMatrix::new(m)
}

/// Diffuse Mueller term per colour channel, not gated by `m`.
pub fn mueller_diffuse(params: &MaterialParams, geom: &ShadingGeometry) -> [MuellerMatrix; 3] {
    let a = geom.angles();
    let Some((ti, to)) = diffuse_transmission(&a) else {
        return [MuellerMatrix::ZERO; 3];
    };
    let core = diffuse_core(&ti, &to);
    params.albedo.map(|alb| core.scale(alb / PI * a.cos_i))
}

/// Specular Mueller term per colour channel.
pub fn mueller_specular(params: &MaterialParams, geom: &ShadingGeometry) -> [MuellerMatrix; 3] {
    let a = geom.angles();
    let scale = specular_scale(params, &a);
    if scale == 0.0 {
        return [MuellerMatrix::ZERO; 3];
    }
    let mut out = [MuellerMatrix::ZERO; 3];
    for (c, m) in out.iter_mut().enumerate() {
        let n = params.ior.channel(c);
        *m = ReflectionTerms::from_cos(n * n, a.cos_d).mueller().scale(scale);
    }
    out
}

/// Incident and exitant frames of the diffuse term. Both x-axes are normal
/// to the plane spanned by the macro normal and the respective direction.
pub fn diffuse_frames(geom: &ShadingGeometry) -> (Frame, Frame) {
    let s_in = geom.n.cross(geom.wi).try_normalize(1e-9).unwrap_or_else(|| geom.wi.any_orthogonal());
    let s_out = geom.n.cross(geom.wo).try_normalize(1e-9).unwrap_or_else(|| geom.wo.any_orthogonal());
    (Frame { d: -geom.wi, x: s_in }, Frame { d: geom.wo, x: s_out })
}

/// Incident and exitant frames of the specular term. They share the s-axis
/// normal to the microfacet plane of incidence (which contains `h`).
pub fn specular_frames(geom: &ShadingGeometry) -> (Frame, Frame) {
    let s = geom.wi.cross(geom.wo).try_normalize(1e-9).unwrap_or_else(|| geom.wo.any_orthogonal());
    (Frame { d: -geom.wi, x: s }, Frame { d: geom.wo, x: s })
}

/// One pBRDF term with the frames its matrices are expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbrdfTerm {
    pub mueller: [MuellerMatrix; 3],
    pub frame_in: Frame,
    pub frame_out: Frame,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbrdfTerms {
    pub diffuse: PbrdfTerm,
    pub specular: PbrdfTerm,
}

/// Both terms with the diffuse one gated by the indicator `m`.
pub fn evaluate(params: &MaterialParams, geom: &ShadingGeometry) -> PbrdfTerms {
    let diffuse = match params.m {
        Indicator::Dielectric => mueller_diffuse(params, geom),
        Indicator::Conductor => [MuellerMatrix::ZERO; 3],
    };
    let (di, dout) = diffuse_frames(geom);
    let (si, sout) = specular_frames(geom);
    PbrdfTerms {
        diffuse: PbrdfTerm { mueller: diffuse, frame_in: di, frame_out: dout },
        specular: PbrdfTerm { mueller: mueller_specular(params, geom), frame_in: si, frame_out: sout },
    }
}

/// `n²` for each channel, the form the Fresnel kernels consume.
pub(crate) fn ior_squared(ior: &ComplexIor) -> [Complex64; 3] {
    [0, 1, 2].map(|c| {
        let n = ior.channel(c);
        n * n
    })
}
