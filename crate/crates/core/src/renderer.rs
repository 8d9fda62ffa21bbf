//! Forward polarimetric renderer.
//!
//! Each camera ray is sphere traced; a hit is shaded by integrating the pBRDF
//! against the environment over a Fibonacci lattice on the hemisphere around
//! the surface normal (equal solid-angle weights `2π/N`, no extra cosine).
//! Every term's outgoing Stokes vector is rotated into the per-pixel camera
//! frame before summation. Misses show the environment as unpolarized
//! background.
//!
//! Shading is split in two stages. [`prepare_hit`] gathers everything that
//! depends only on geometry and lighting; [`accumulate_channel`] combines it
//! with material parameters. The inverse solver caches the first stage and
//! reuses the second unchanged, so fitted and rendered images share one code
//! path.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::fresnel::{ReflectionTerms, TransmissionTerms};
use crate::math::{orthonormal_basis, Vec3};
use crate::pbrdf::{
    diffuse_frames, diffuse_transmission, ior_squared, specular_frames, specular_scale, Indicator,
    MaterialParams, ShadingAngles, ShadingGeometry, GRAZING_EPSILON,
};
use crate::polcore::{dolp, frame_rotation_angle, polarizer_quad, rotate_stokes, Frame, StokesVector};
use crate::scene::{Hit, Scene};

/// Offset along the normal for shadow-ray origins.
pub const SHADOW_OFFSET: f64 = 1e-3;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Fibonacci lattice on the unit hemisphere around `+z`.
#[derive(Debug, Clone)]
pub struct FibonacciLattice {
    local: Vec<Vec3>,
    weight: f64,
}

impl FibonacciLattice {
    /// `n` points at heights `1 − (i + ½)/n` (equal-area bands) and golden
    /// angle azimuths, offset by an angle drawn from `seed`.
    pub fn new(n: usize, seed: u64) -> Self {
        let offset = ChaCha8Rng::seed_from_u64(seed).gen::<f64>() * 2.0 * PI;
        let local = (0..n)
            .map(|i| {
                let z = 1.0 - (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let (s, c) = (i as f64 * GOLDEN_ANGLE + offset).sin_cos();
                Vec3::new(r * c, r * s, z)
            })
            .collect();
        FibonacciLattice { local, weight: 2.0 * PI / n as f64 }
    }

    pub fn len(&self) -> usize {
        self.local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Lattice directions expressed around `normal`.
    pub fn oriented(&self, normal: Vec3) -> impl Iterator<Item = Vec3> + '_ {
        let (t, b) = orthonormal_basis(normal);
        self.local.iter().map(move |l| t * l.x + b * l.y + normal * l.z)
    }
}

/// `n` hemisphere directions around `normal` with their solid-angle weights.
pub fn fibonacci_hemisphere(n: usize, normal: Vec3, seed: u64) -> Vec<(Vec3, f64)> {
    let lattice = FibonacciLattice::new(n, seed);
    let w = lattice.weight();
    lattice.oriented(normal).map(|d| (d, w)).collect()
}

/// Environment radiance arriving at a hit from direction `wi` as unpolarized
/// Stokes vectors, zero when the shadow ray is blocked. Unpolarized light is
/// the same in every reference frame.
pub fn incident_stokes(scene: &Scene, hit: &Hit, wi: Vec3) -> [StokesVector; 3] {
    let origin = hit.position + hit.normal * SHADOW_OFFSET;
    if scene.visible(origin, wi) {
        scene.env.radiance(wi).map(StokesVector::unpolarized)
    } else {
        [StokesVector::ZERO; 3]
    }
}

/// `(cos 2φ, sin 2φ)` of the rotation from `from` into `to`.
fn rotation_terms(from: &Frame, to: &Frame) -> (f64, f64) {
    let phi = frame_rotation_angle(from, to).unwrap_or(0.0);
    let (s, c) = (2.0 * phi).sin_cos();
    (c, s)
}

/// Diffuse data for one pixel. Only the albedo is left to apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffuseGeometry {
    pub t_plus: f64,
    pub t_minus: f64,
    pub cos2: f64,
    pub sin2: f64,
    /// `Σ cos θi · T⁺(θi) · L · w` per channel.
    pub irradiance: [f64; 3],
}

/// One lattice direction that can carry specular light to the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecularSample {
    pub angles: ShadingAngles,
    pub cos2: f64,
    pub sin2: f64,
    /// Visible radiance times quadrature weight, per channel.
    pub radiance: [f64; 3],
}

/// Material-independent shading data for one hit.
#[derive(Debug, Clone, PartialEq)]
pub struct HitGeometry {
    pub material_id: usize,
    pub diffuse: Option<DiffuseGeometry>,
    pub specular: Vec<SpecularSample>,
}

/// Gathers lattice samples, visibility and frame rotations for a hit seen
/// along `wo` (towards the camera) in `camera_frame`.
pub fn prepare_hit(scene: &Scene, lattice: &FibonacciLattice, hit: &Hit, wo: Vec3, camera_frame: &Frame) -> HitGeometry {
    let n = hit.normal;
    let w = lattice.weight();
    let mut irradiance = [0.0; 3];
    let mut diffuse_out: Option<TransmissionTerms> = None;
    let mut diffuse_rot = (1.0, 0.0);
    let mut specular = Vec::new();
    for wi in lattice.oriented(n) {
        let incident = incident_stokes(scene, hit, wi);
        if incident.iter().all(|s| s.s0 == 0.0) {
            continue;
        }
        let radiance = incident.map(|s| s.s0 * w);
        let geom = ShadingGeometry::new(n, wi, wo);
        let a = geom.angles();
        if let Some((ti, to)) = diffuse_transmission(&a) {
            if diffuse_out.is_none() {
                diffuse_out = Some(to);
                diffuse_rot = rotation_terms(&diffuse_frames(&geom).1, camera_frame);
            }
            for c in 0..3 {
                irradiance[c] += a.cos_i * ti.t_plus * radiance[c];
            }
        }
        if a.cos_o > GRAZING_EPSILON && a.cos_i > 0.0 && !a.degenerate_half && a.cos_d > 0.0 {
            let (cos2, sin2) = rotation_terms(&specular_frames(&geom).1, camera_frame);
            specular.push(SpecularSample { angles: a, cos2, sin2, radiance });
        }
    }
    let diffuse = diffuse_out.map(|to| DiffuseGeometry {
        t_plus: to.t_plus,
        t_minus: to.t_minus,
        cos2: diffuse_rot.0,
        sin2: diffuse_rot.1,
        irradiance,
    });
    HitGeometry { material_id: hit.material_id, diffuse, specular }
}

/// Diffuse Stokes vector of one colour channel in the camera frame, zero for
/// conductors.
#[inline]
pub(crate) fn diffuse_channel(params: &MaterialParams, geom: &HitGeometry, channel: usize) -> StokesVector {
    match (&geom.diffuse, params.m) {
        (Some(d), Indicator::Dielectric) => {
            let k = params.albedo[channel] / PI * d.irradiance[channel];
            rotate_stokes(StokesVector::new(k * d.t_plus, k * d.t_minus, 0.0), d.cos2, d.sin2)
        }
        _ => StokesVector::ZERO,
    }
}

/// Camera-frame contribution of one specular sample with a precomputed
/// scale and Fresnel pair `(R⁺, R⁻)`.
#[inline]
pub(crate) fn specular_contribution(sample: &SpecularSample, channel: usize, scale: f64, fresnel: (f64, f64)) -> StokesVector {
    let a = scale * sample.radiance[channel];
    rotate_stokes(StokesVector::new(a * fresnel.0, a * fresnel.1, 0.0), sample.cos2, sample.sin2)
}

/// Stokes vector of one colour channel in the camera frame.
pub fn accumulate_channel(params: &MaterialParams, geom: &HitGeometry, channel: usize) -> StokesVector {
    let mut s = diffuse_channel(params, geom, channel);
    let n2 = ior_squared(&params.ior)[channel];
    for sample in &geom.specular {
        let scale = specular_scale(params, &sample.angles);
        if scale == 0.0 {
            continue;
        }
        let r = ReflectionTerms::from_cos(n2, sample.angles.cos_d);
        s += specular_contribution(sample, channel, scale, (r.r_plus, r.r_minus));
    }
    s
}

pub fn accumulate(params: &MaterialParams, geom: &HitGeometry) -> [StokesVector; 3] {
    [0, 1, 2].map(|c| accumulate_channel(params, geom, c))
}

/// Renderer switches.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RenderOptions {
    /// Replace every Mueller term by its intensity-only (depolarizing) part.
    pub depolarize: bool,
}

/// Outgoing Stokes vectors towards the camera for one hit.
pub fn shade(scene: &Scene, hit: &Hit, wo: Vec3, camera_frame: &Frame) -> [StokesVector; 3] {
    let lattice = FibonacciLattice::new(scene.hemisphere_samples, scene.seed);
    let geom = prepare_hit(scene, &lattice, hit, wo, camera_frame);
    accumulate(&scene.materials[hit.material_id], &geom)
}

fn depolarized(s: [StokesVector; 3]) -> [StokesVector; 3] {
    s.map(|v| StokesVector::new(v.s0, 0.0, 0.0))
}

/// Per-pixel Stokes image, row-major from the top-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizedImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[StokesVector; 3]>,
}

impl PolarizedImage {
    pub fn new(width: usize, height: usize) -> Self {
        PolarizedImage { width, height, pixels: vec![[StokesVector::ZERO; 3]; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> [StokesVector; 3] {
        self.pixels[y * self.width + x]
    }

    /// One Stokes component (0, 1 or 2) as RGB triples.
    pub fn component(&self, k: usize) -> Vec<[f64; 3]> {
        self.pixels.iter().map(|p| p.map(|s| s.to_array()[k])).collect()
    }

    pub fn from_components(width: usize, height: usize, s0: &[[f64; 3]], s1: &[[f64; 3]], s2: &[[f64; 3]]) -> Self {
        let pixels = (0..width * height)
            .map(|i| [0, 1, 2].map(|c| StokesVector::new(s0[i][c], s1[i][c], s2[i][c])))
            .collect();
        PolarizedImage { width, height, pixels }
    }
}

/// What one camera ray sees.
#[derive(Debug, Clone, PartialEq)]
pub enum PixelGeometry {
    Miss([f64; 3]),
    Hit(HitGeometry),
}

/// Traces the ray of pixel `(px, py)` and prepares its shading data.
pub fn prepare_pixel(scene: &Scene, lattice: &FibonacciLattice, px: usize, py: usize) -> PixelGeometry {
    let cam = &scene.camera;
    let dir = cam.ray_direction(px, py);
    match scene.sphere_trace(cam.position, dir) {
        None => PixelGeometry::Miss(scene.env.radiance(dir)),
        Some(hit) => {
            let frame = cam.pixel_frame(dir);
            PixelGeometry::Hit(prepare_hit(scene, lattice, &hit, -dir, &frame))
        }
    }
}

/// Prepares every pixel of the scene's camera, in row-major order.
pub fn prepare_view(scene: &Scene) -> Vec<PixelGeometry> {
    let lattice = FibonacciLattice::new(scene.hemisphere_samples, scene.seed);
    let (w, h) = (scene.camera.width, scene.camera.height);
    (0..w * h)
        .into_par_iter()
        .map(|i| prepare_pixel(scene, &lattice, i % w, i / w))
        .collect()
}

pub fn pixel_stokes(materials: &[MaterialParams], pixel: &PixelGeometry) -> [StokesVector; 3] {
    match pixel {
        PixelGeometry::Miss(l) => l.map(StokesVector::unpolarized),
        PixelGeometry::Hit(g) => accumulate(&materials[g.material_id], g),
    }
}

/// Rendered image plus hit and conductor masks.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub image: PolarizedImage,
    pub mask: Vec<bool>,
    pub conductor_mask: Vec<bool>,
}

pub fn render_view(scene: &Scene, options: &RenderOptions) -> RenderedView {
    let lattice = FibonacciLattice::new(scene.hemisphere_samples, scene.seed);
    let (w, h) = (scene.camera.width, scene.camera.height);
    let per_pixel: Vec<([StokesVector; 3], bool, bool)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let pixel = prepare_pixel(scene, &lattice, i % w, i / w);
            let mut s = pixel_stokes(&scene.materials, &pixel);
            if options.depolarize {
                s = depolarized(s);
            }
            match &pixel {
                PixelGeometry::Miss(_) => (s, false, false),
                PixelGeometry::Hit(g) => (s, true, scene.materials[g.material_id].m.is_conductor()),
            }
        })
        .collect();
    let mut image = PolarizedImage::new(w, h);
    let mut mask = Vec::with_capacity(w * h);
    let mut conductor_mask = Vec::with_capacity(w * h);
    for (i, (s, hit, cond)) in per_pixel.into_iter().enumerate() {
        image.pixels[i] = s;
        mask.push(hit);
        conductor_mask.push(cond);
    }
    RenderedView { image, mask, conductor_mask }
}

pub fn render(scene: &Scene) -> PolarizedImage {
    render_view(scene, &RenderOptions::default()).image
}

/// Per-pixel RGB planes derived from a Stokes image.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedImages {
    pub s0: Vec<[f64; 3]>,
    pub dolp: Vec<[f64; 3]>,
    pub i000: Vec<[f64; 3]>,
    pub i045: Vec<[f64; 3]>,
    pub i090: Vec<[f64; 3]>,
    pub i135: Vec<[f64; 3]>,
}

pub fn derive_images(img: &PolarizedImage) -> DerivedImages {
    let quads: Vec<[[f64; 4]; 3]> = img.pixels.iter().map(|p| p.map(polarizer_quad)).collect();
    let plane = |k: usize| quads.iter().map(|q| q.map(|c| c[k])).collect::<Vec<_>>();
    DerivedImages {
        s0: img.component(0),
        dolp: img.pixels.iter().map(|p| p.map(dolp)).collect(),
        i000: plane(0),
        i045: plane(1),
        i090: plane(2),
        i135: plane(3),
    }
}
