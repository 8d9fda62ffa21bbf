//! Material recovery on known geometry.
//!
//! The objective is an L1 fit of rendered to observed Stokes images plus a
//! weighted L1 term on DoLP. Free material parameters are optimized with
//! Adam in a transformed space (log for positive quantities, logit for
//! albedo) using central finite differences.
//!
//! Geometry is fixed during recovery, so every observation view is traced
//! and prepared once; each loss evaluation only re-accumulates the pBRDF.
//! The loss is a sum of independent per-channel parts, which lets a
//! finite-difference probe of a channel-specific parameter touch just that
//! channel.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::pbrdf::{Indicator, MaterialError, MaterialParams};
use crate::polcore::{dolp, StokesVector};
use crate::fresnel::ReflectionTerms;
use crate::pbrdf::{ior_squared, specular_scale};
use crate::renderer::{
    accumulate_channel, diffuse_channel, prepare_view, render, specular_contribution, HitGeometry, PixelGeometry,
    PolarizedImage,
};
use crate::scene::{Camera, Scene, Shape};

pub const ALBEDO_CLAMP: f64 = 1e-6;
pub const MIN_K: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InverseError {
    #[error("observation mask is empty")]
    EmptyMask,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite loss {value} while probing coordinate {coordinate} ({name})")]
    NonFiniteProbe { coordinate: usize, name: String, value: f64 },
    #[error("optimization diverged after {} iterations (last loss {:?})", .trace.len().saturating_sub(1), .trace.last())]
    Diverged { trace: Vec<f64> },
    #[error("invalid free-parameter selection: {0}")]
    InvalidFree(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Material(#[from] MaterialError),
}

// ---------------------------------------------------------------------------
// parameter packing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FreeVar {
    Roughness,
    Albedo,
    Ks,
    Eta,
    K,
}

impl FreeVar {
    pub fn parse(s: &str) -> Option<FreeVar> {
        Some(match s {
            "roughness" => FreeVar::Roughness,
            "albedo" => FreeVar::Albedo,
            "ks" => FreeVar::Ks,
            "eta" => FreeVar::Eta,
            "k" => FreeVar::K,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FreeVar::Roughness => "roughness",
            FreeVar::Albedo => "albedo",
            FreeVar::Ks => "ks",
            FreeVar::Eta => "eta",
            FreeVar::K => "k",
        }
    }

    fn per_channel(self) -> bool {
        matches!(self, FreeVar::Albedo | FreeVar::Eta | FreeVar::K)
    }
}

/// One coordinate of the packed vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub material: usize,
    pub var: FreeVar,
    /// Colour channel for per-channel variables.
    pub channel: Option<usize>,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}.{}", self.material, self.var.name())?;
        if let Some(c) = self.channel {
            write!(f, "[{c}]")?;
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(ALBEDO_CLAMP, 1.0 - ALBEDO_CLAMP);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Selection of free material variables and the layout of the packed vector.
/// The indicator `m` is never free.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeParams {
    slots: Vec<Slot>,
}

impl FreeParams {
    pub fn new(materials: &[MaterialParams], selection: &[(usize, FreeVar)]) -> Result<Self, InverseError> {
        let mut slots = Vec::new();
        for (i, &(mat, var)) in selection.iter().enumerate() {
            let params = materials
                .get(mat)
                .ok_or_else(|| InverseError::InvalidFree(format!("material {mat} does not exist")))?;
            if selection[..i].contains(&(mat, var)) {
                return Err(InverseError::InvalidFree(format!("m{mat}.{} listed twice", var.name())));
            }
            match (params.m, var) {
                (Indicator::Dielectric, FreeVar::Eta | FreeVar::K) => {
                    return Err(InverseError::InvalidFree(format!(
                        "m{mat} is a dielectric; its index is fixed at 1.5 - 0i"
                    )))
                }
                (Indicator::Conductor, FreeVar::Albedo) => {
                    return Err(InverseError::InvalidFree(format!("m{mat} is a conductor; albedo has no effect")))
                }
                _ => {}
            }
            if var.per_channel() {
                slots.extend((0..3).map(|c| Slot { material: mat, var, channel: Some(c) }));
            } else {
                slots.push(Slot { material: mat, var, channel: None });
            }
        }
        if slots.is_empty() {
            return Err(InverseError::InvalidFree("no free parameters".into()));
        }
        Ok(FreeParams { slots })
    }

    /// Parses a comma-separated list such as `roughness,eta,k,ks` or
    /// `0:roughness,1:albedo`; bare names refer to material 0.
    pub fn parse(materials: &[MaterialParams], text: &str) -> Result<Self, InverseError> {
        let mut selection = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (mat, name) = match item.split_once(':') {
                Some((m, n)) => (
                    m.trim().parse::<usize>().map_err(|_| InverseError::InvalidFree(format!("bad material index in {item:?}")))?,
                    n.trim(),
                ),
                None => (0, item),
            };
            let var = FreeVar::parse(name).ok_or_else(|| InverseError::InvalidFree(format!("unknown parameter {name:?}")))?;
            selection.push((mat, var));
        }
        FreeParams::new(materials, &selection)
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Channels whose loss depends on coordinate `i`.
    pub fn channels(&self, i: usize) -> std::ops::Range<usize> {
        match self.slots[i].channel {
            Some(c) => c..c + 1,
            None => 0..3,
        }
    }

    pub fn value(&self, materials: &[MaterialParams], i: usize) -> f64 {
        let s = self.slots[i];
        let p = &materials[s.material];
        let c = s.channel.unwrap_or(0);
        match s.var {
            FreeVar::Roughness => p.roughness,
            FreeVar::Albedo => p.albedo[c],
            FreeVar::Ks => p.ks,
            FreeVar::Eta => p.ior.eta[c],
            FreeVar::K => p.ior.k[c],
        }
    }

    pub fn pack(&self, materials: &[MaterialParams]) -> Vec<f64> {
        (0..self.slots.len())
            .map(|i| {
                let v = self.value(materials, i);
                match self.slots[i].var {
                    FreeVar::Albedo => logit(v),
                    FreeVar::K => v.max(MIN_K).ln(),
                    _ => v.ln(),
                }
            })
            .collect()
    }

    /// Writes the packed values into a copy of `base`.
    pub fn unpack(&self, x: &[f64], base: &[MaterialParams]) -> Vec<MaterialParams> {
        let mut out = base.to_vec();
        for (s, &v) in self.slots.iter().zip(x) {
            let p = &mut out[s.material];
            let c = s.channel.unwrap_or(0);
            match s.var {
                FreeVar::Roughness => p.roughness = v.exp().min(1.0),
                FreeVar::Albedo => p.albedo[c] = sigmoid(v),
                FreeVar::Ks => p.ks = v.exp(),
                FreeVar::Eta => p.ior.eta[c] = v.exp(),
                FreeVar::K => p.ior.k[c] = v.exp(),
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// observations and losses

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedView {
    pub camera: Camera,
    pub image: PolarizedImage,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub views: Vec<ObservedView>,
    pub lambda_s: f64,
    pub lambda_dolp: f64,
    /// Restrict the DoLP term to masked pixels (otherwise every pixel).
    pub mask_dolp: bool,
}

pub const DEFAULT_LAMBDA_S: f64 = 1.0;
pub const DEFAULT_LAMBDA_DOLP: f64 = 0.1;

impl Observations {
    pub fn new(views: Vec<ObservedView>) -> Self {
        Observations { views, lambda_s: DEFAULT_LAMBDA_S, lambda_dolp: DEFAULT_LAMBDA_DOLP, mask_dolp: true }
    }

    /// Renders `scene` from each camera, using hit masks as object masks.
    pub fn render(scene: &Scene, cameras: &[Camera]) -> Self {
        let views = cameras
            .iter()
            .map(|cam| {
                let v = crate::renderer::render_view(&scene.with_camera(*cam), &Default::default());
                ObservedView { camera: *cam, image: v.image, mask: v.mask }
            })
            .collect();
        Observations::new(views)
    }

    pub fn validate(&self) -> Result<(), InverseError> {
        let first = self.views.first().ok_or(InverseError::EmptyMask)?;
        for (i, v) in self.views.iter().enumerate() {
            let n = v.image.width * v.image.height;
            if v.image.width != first.image.width || v.image.height != first.image.height {
                return Err(InverseError::DimensionMismatch(format!("view {i} differs from view 0")));
            }
            if v.image.pixels.len() != n || v.mask.len() != n {
                return Err(InverseError::DimensionMismatch(format!("view {i} image or mask length")));
            }
            if v.camera.width != v.image.width || v.camera.height != v.image.height {
                return Err(InverseError::DimensionMismatch(format!("view {i} camera resolution")));
            }
        }
        if self.mask_count() == 0 {
            return Err(InverseError::EmptyMask);
        }
        Ok(())
    }

    fn mask_count(&self) -> usize {
        self.views.iter().map(|v| v.mask.iter().filter(|m| **m).count()).sum()
    }

    fn dolp_count(&self) -> usize {
        if self.mask_dolp {
            self.mask_count()
        } else {
            self.views.iter().map(|v| v.mask.len()).sum()
        }
    }

    fn channel_loss_from(&self, channel: usize, view: usize, rendered: impl Fn(usize) -> StokesVector + Sync) -> (f64, f64) {
        let v = &self.views[view];
        let per_pixel: Vec<(f64, f64)> = (0..v.mask.len())
            .into_par_iter()
            .map(|i| {
                let in_mask = v.mask[i];
                if !in_mask && (self.mask_dolp || self.lambda_dolp == 0.0) {
                    return (0.0, 0.0);
                }
                let s = rendered(i);
                let t = v.image.pixels[i][channel];
                let ds = if in_mask { (s.s0 - t.s0).abs() + (s.s1 - t.s1).abs() + (s.s2 - t.s2).abs() } else { 0.0 };
                (ds, (dolp(s) - dolp(t)).abs())
            })
            .collect();
        per_pixel.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1))
    }

    fn combine(&self, stokes_sum: f64, dolp_sum: f64) -> f64 {
        self.lambda_s * stokes_sum / (9 * self.mask_count()) as f64
            + self.lambda_dolp * dolp_sum / (3 * self.dolp_count()) as f64
    }
}

/// Joint loss of rendering `scene` from each observed camera.
pub fn joint_loss(scene: &Scene, obs: &Observations) -> Result<f64, InverseError> {
    obs.validate()?;
    let mut total = 0.0;
    for (k, view) in obs.views.iter().enumerate() {
        let img = render(&scene.with_camera(view.camera));
        for c in 0..3 {
            let (s, d) = obs.channel_loss_from(c, k, |i| img.pixels[i][c]);
            total += obs.combine(s, d);
        }
    }
    Ok(total)
}

/// Observation views traced and prepared once for fixed geometry.
pub struct PreparedObservations<'a> {
    obs: &'a Observations,
    views: Vec<Vec<PixelGeometry>>,
}

impl<'a> PreparedObservations<'a> {
    pub fn new(scene: &Scene, obs: &'a Observations) -> Result<Self, InverseError> {
        obs.validate()?;
        let views = obs.views.iter().map(|v| prepare_view(&scene.with_camera(v.camera))).collect();
        Ok(PreparedObservations { obs, views })
    }

    /// Loss contribution of one colour channel.
    pub fn channel_loss(&self, materials: &[MaterialParams], channel: usize) -> f64 {
        let mut total = 0.0;
        for (k, pixels) in self.views.iter().enumerate() {
            let (s, d) = self.obs.channel_loss_from(channel, k, |i| match &pixels[i] {
                PixelGeometry::Miss(l) => StokesVector::unpolarized(l[channel]),
                PixelGeometry::Hit(g) => accumulate_channel(&materials[g.material_id], g, channel),
            });
            total += self.obs.combine(s, d);
        }
        total
    }

    pub fn loss(&self, materials: &[MaterialParams]) -> f64 {
        (0..3).map(|c| self.channel_loss(materials, c)).sum()
    }
}

/// Shading factors of one hit pixel at a fixed parameter point.
struct PixelCache {
    /// Specular scale per lattice sample (zero where the sample is culled).
    scale: Vec<f64>,
    /// Fresnel `(R⁺, R⁻)` per sample and channel.
    fresnel: Vec<[(f64, f64); 3]>,
    diffuse: [StokesVector; 3],
    specular: [StokesVector; 3],
    total: [StokesVector; 3],
}

impl PixelCache {
    fn new(params: &MaterialParams, geom: &HitGeometry) -> Self {
        let n2 = ior_squared(&params.ior);
        let mut scale = Vec::with_capacity(geom.specular.len());
        let mut fresnel = Vec::with_capacity(geom.specular.len());
        let diffuse = [0, 1, 2].map(|c| diffuse_channel(params, geom, c));
        let mut specular = [StokesVector::ZERO; 3];
        // same summation order as accumulate_channel, so totals match it bitwise
        let mut total = diffuse;
        for sample in &geom.specular {
            let sc = specular_scale(params, &sample.angles);
            let mut f = [(0.0, 0.0); 3];
            if sc != 0.0 {
                for c in 0..3 {
                    let r = ReflectionTerms::from_cos(n2[c], sample.angles.cos_d);
                    f[c] = (r.r_plus, r.r_minus);
                    let contribution = specular_contribution(sample, c, sc, f[c]);
                    specular[c] += contribution;
                    total[c] += contribution;
                }
            }
            scale.push(sc);
            fresnel.push(f);
        }
        PixelCache { scale, fresnel, diffuse, specular, total }
    }
}

/// Per-pixel shading factors of every view at one parameter point.
struct ProbeCache {
    materials: Vec<MaterialParams>,
    views: Vec<Vec<Option<PixelCache>>>,
}

impl PreparedObservations<'_> {
    fn build_cache(&self, materials: &[MaterialParams]) -> ProbeCache {
        let views = self
            .views
            .iter()
            .map(|pixels| {
                pixels
                    .par_iter()
                    .map(|p| match p {
                        PixelGeometry::Miss(_) => None,
                        PixelGeometry::Hit(g) => Some(PixelCache::new(&materials[g.material_id], g)),
                    })
                    .collect()
            })
            .collect();
        ProbeCache { materials: materials.to_vec(), views }
    }

    fn cached_channel_loss(&self, cache: &ProbeCache, channel: usize) -> f64 {
        self.probe_channel_loss(cache, channel, |_, pc| pc.total[channel])
    }

    fn probe_channel_loss(
        &self,
        cache: &ProbeCache,
        channel: usize,
        hit: impl Fn(&HitGeometry, &PixelCache) -> StokesVector + Sync,
    ) -> f64 {
        let mut total = 0.0;
        for (k, (pixels, cached)) in self.views.iter().zip(&cache.views).enumerate() {
            let (s, d) = self.obs.channel_loss_from(channel, k, |i| match (&pixels[i], &cached[i]) {
                (PixelGeometry::Hit(g), Some(pc)) => hit(g, pc),
                (PixelGeometry::Miss(l), _) => StokesVector::unpolarized(l[channel]),
                (PixelGeometry::Hit(_), None) => unreachable!("cache built from the same views"),
            });
            total += self.obs.combine(s, d);
        }
        total
    }

    /// Loss over `channel` with the parameter in `slot` changed to its value
    /// in `materials`, recomputing only the factor it affects.
    fn probe_loss(&self, cache: &ProbeCache, materials: &[MaterialParams], slot: Slot, channel: usize) -> f64 {
        let j = slot.material;
        let (p, base) = (&materials[j], &cache.materials[j]);
        let c = channel;
        let n2 = ior_squared(&p.ior)[c];
        self.probe_channel_loss(cache, c, |g, pc| {
            if g.material_id != j {
                return pc.total[c];
            }
            match slot.var {
                FreeVar::Roughness => {
                    let mut s = pc.diffuse[c];
                    for (sample, f) in g.specular.iter().zip(&pc.fresnel) {
                        let scale = specular_scale(p, &sample.angles);
                        if scale != 0.0 {
                            s += specular_contribution(sample, c, scale, f[c]);
                        }
                    }
                    s
                }
                FreeVar::Eta | FreeVar::K => {
                    let mut s = pc.diffuse[c];
                    for (sample, &scale) in g.specular.iter().zip(&pc.scale) {
                        if scale != 0.0 {
                            let r = ReflectionTerms::from_cos(n2, sample.angles.cos_d);
                            s += specular_contribution(sample, c, scale, (r.r_plus, r.r_minus));
                        }
                    }
                    s
                }
                FreeVar::Ks => pc.diffuse[c] + pc.specular[c].scale(p.ks / base.ks),
                FreeVar::Albedo => pc.diffuse[c].scale(p.albedo[c] / base.albedo[c]) + pc.specular[c],
            }
        })
    }
}

// ---------------------------------------------------------------------------
// optimization

/// A scalar objective with a numerical gradient.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> Result<f64, InverseError>;

    fn gradient(&mut self, x: &[f64], h: f64) -> Result<Vec<f64>, InverseError> {
        grad_fd(|p| self.value(p), x, h)
    }
}

impl<F: FnMut(&[f64]) -> f64> Objective for F {
    fn value(&mut self, x: &[f64]) -> Result<f64, InverseError> {
        Ok(self(x))
    }
}

fn probe_error(coordinate: usize, value: f64) -> InverseError {
    InverseError::NonFiniteProbe { coordinate, name: format!("x[{coordinate}]"), value }
}

/// Central-difference gradient, `2·dim` evaluations.
pub fn grad_fd(
    mut f: impl FnMut(&[f64]) -> Result<f64, InverseError>,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>, InverseError> {
    if !(h > 0.0) {
        return Err(InverseError::InvalidConfig(format!("finite-difference step must be > 0 (got {h})")));
    }
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let fp = f(&p)?;
            p[i] = x[i] - h;
            let fm = f(&p)?;
            p[i] = x[i];
            for v in [fp, fm] {
                if !v.is_finite() {
                    return Err(probe_error(i, v));
                }
            }
            Ok((fp - fm) / (2.0 * h))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iters: usize,
    /// Finite-difference step in transformed space.
    pub fd_step: f64,
    /// Stop once the loss falls below this.
    pub tolerance: f64,
    /// Learning rate at the last iteration as a fraction of `lr`, reached
    /// by geometric decay; 1 keeps it constant.
    pub lr_final_fraction: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            iters: 300,
            fd_step: 1e-4,
            tolerance: 1e-12,
            lr_final_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamResult {
    /// Iterate with the lowest loss.
    pub best: Vec<f64>,
    pub best_loss: f64,
    /// Loss at the initial point followed by one entry per iteration.
    pub trace: Vec<f64>,
}

impl AdamResult {
    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }
}

pub fn adam_optimize<O: Objective + ?Sized>(obj: &mut O, init: &[f64], cfg: &AdamConfig) -> Result<AdamResult, InverseError> {
    if cfg.iters == 0 {
        return Err(InverseError::InvalidConfig("iters must be >= 1".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr_final_fraction > 0.0) {
        return Err(InverseError::InvalidConfig("lr and lr_final_fraction must be > 0".into()));
    }
    let mut x = init.to_vec();
    let f0 = obj.value(&x)?;
    if !f0.is_finite() {
        return Err(InverseError::Diverged { trace: vec![f0] });
    }
    let mut trace = vec![f0];
    let (mut best, mut best_loss) = (x.clone(), f0);
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let decay = if cfg.iters > 1 { cfg.lr_final_fraction.powf(1.0 / (cfg.iters - 1) as f64) } else { 1.0 };
    let mut lr = cfg.lr;
    for t in 1..=cfg.iters {
        if best_loss < cfg.tolerance {
            break;
        }
        let g = obj.gradient(&x, cfg.fd_step)?;
        let (b1t, b2t) = (1.0 - cfg.beta1.powi(t as i32), 1.0 - cfg.beta2.powi(t as i32));
        for i in 0..x.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            x[i] -= lr * (m[i] / b1t) / ((v[i] / b2t).sqrt() + cfg.eps);
        }
        lr *= decay;
        let f = obj.value(&x)?;
        trace.push(f);
        if !f.is_finite() {
            return Err(InverseError::Diverged { trace });
        }
        if f < best_loss {
            best_loss = f;
            best.clone_from(&x);
        }
    }
    Ok(AdamResult { best, best_loss, trace })
}

/// Joint loss over the packed free parameters.
///
/// Shading factors at the current iterate are cached, and each
/// finite-difference probe recomputes only what its parameter changes: the
/// microfacet scale for roughness, one channel's Fresnel terms for `eta`/`k`,
/// and a rescaled pixel sum for `ks`/albedo. Channels a parameter cannot
/// affect cancel exactly and are skipped.
pub struct MaterialObjective<'a> {
    prepared: &'a PreparedObservations<'a>,
    free: &'a FreeParams,
    base: Vec<MaterialParams>,
    memo: Option<(Vec<f64>, [f64; 3], ProbeCache)>,
}

impl<'a> MaterialObjective<'a> {
    pub fn new(prepared: &'a PreparedObservations<'a>, free: &'a FreeParams, base: &[MaterialParams]) -> Self {
        MaterialObjective { prepared, free, base: base.to_vec(), memo: None }
    }

    fn ensure_cached(&mut self, x: &[f64]) {
        if matches!(&self.memo, Some((mx, _, _)) if mx.as_slice() == x) {
            return;
        }
        let mats = self.free.unpack(x, &self.base);
        let cache = self.prepared.build_cache(&mats);
        let l = [0, 1, 2].map(|c| self.prepared.cached_channel_loss(&cache, c));
        self.memo = Some((x.to_vec(), l, cache));
    }
}

impl Objective for MaterialObjective<'_> {
    fn value(&mut self, x: &[f64]) -> Result<f64, InverseError> {
        self.ensure_cached(x);
        Ok(self.memo.as_ref().map_or(0.0, |m| m.1.iter().sum()))
    }

    /// Central differences, `2·dim` probes.
    fn gradient(&mut self, x: &[f64], h: f64) -> Result<Vec<f64>, InverseError> {
        if !(h > 0.0) {
            return Err(InverseError::InvalidConfig(format!("finite-difference step must be > 0 (got {h})")));
        }
        self.ensure_cached(x);
        let Some((_, _, cache)) = &self.memo else { unreachable!() };
        let mut p = x.to_vec();
        let mut g = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let slot = self.free.slots()[i];
            let mut side = |v: f64| {
                p[i] = v;
                let mats = self.free.unpack(&p, &self.base);
                self.free.channels(i).map(|c| self.prepared.probe_loss(cache, &mats, slot, c)).sum::<f64>()
            };
            let fp = side(x[i] + h);
            let fm = side(x[i] - h);
            p[i] = x[i];
            for v in [fp, fm] {
                if !v.is_finite() {
                    return Err(InverseError::NonFiniteProbe { coordinate: i, name: slot.to_string(), value: v });
                }
            }
            g.push((fp - fm) / (2.0 * h));
        }
        Ok(g)
    }
}

/// Starting values for free parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Fixed neutral values (see [`InitValues`]).
    Neutral(InitValues),
    /// Whatever the scene's materials hold.
    FromScene,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitValues {
    pub roughness: f64,
    pub albedo: f64,
    pub ks: f64,
    pub eta: f64,
    pub k: f64,
}

impl Default for InitValues {
    fn default() -> Self {
        InitValues { roughness: 0.3, albedo: 0.5, ks: 0.5, eta: 1.0, k: 1.0 }
    }
}

impl Default for Init {
    fn default() -> Self {
        Init::Neutral(InitValues::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecoverConfig {
    pub adam: AdamConfig,
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub gt: Option<f64>,
    pub recovered: f64,
}

impl ReportRow {
    pub fn abs_error(&self) -> Option<f64> {
        self.gt.map(|g| (self.recovered - g).abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub materials: Vec<MaterialParams>,
    pub report: Vec<ReportRow>,
    pub adam: AdamResult,
}

fn initial_materials(scene: &Scene, free: &FreeParams, init: &Init) -> Vec<MaterialParams> {
    let mut mats = scene.materials.clone();
    if let Init::Neutral(v) = init {
        for s in free.slots() {
            let p = &mut mats[s.material];
            let c = s.channel.unwrap_or(0);
            match s.var {
                FreeVar::Roughness => p.roughness = v.roughness,
                FreeVar::Albedo => p.albedo[c] = v.albedo,
                FreeVar::Ks => p.ks = v.ks,
                FreeVar::Eta => p.ior.eta[c] = v.eta,
                FreeVar::K => p.ior.k[c] = v.k,
            }
        }
    }
    mats
}

/// Fits the free parameters of `scene`'s materials to `obs`. The geometry
/// of `scene` must be the one that produced the observations.
pub fn recover_materials(
    scene: &Scene,
    obs: &Observations,
    free: &FreeParams,
    config: &RecoverConfig,
    ground_truth: Option<&[MaterialParams]>,
) -> Result<Recovery, InverseError> {
    let prepared = PreparedObservations::new(scene, obs)?;
    let start = initial_materials(scene, free, &config.init);
    let mut objective = MaterialObjective::new(&prepared, free, &start);
    let adam = adam_optimize(&mut objective, &free.pack(&start), &config.adam)?;
    let materials = free.unpack(&adam.best, &start);
    for m in &materials {
        m.validate()?;
    }
    let report = (0..free.len())
        .map(|i| ReportRow {
            name: free.slots()[i].to_string(),
            gt: ground_truth.map(|gt| free.value(gt, i)),
            recovered: free.value(&materials, i),
        })
        .collect();
    Ok(Recovery { materials, report, adam })
}

// ---------------------------------------------------------------------------
// landscape

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeomParam {
    SphereRadius,
    /// Axis 0, 1 or 2 of the first sphere's centre.
    SphereCenter(usize),
}

impl GeomParam {
    pub fn parse(s: &str) -> Option<GeomParam> {
        Some(match s {
            "radius" | "sphere_radius" => GeomParam::SphereRadius,
            "center_x" => GeomParam::SphereCenter(0),
            "center_y" => GeomParam::SphereCenter(1),
            "center_z" => GeomParam::SphereCenter(2),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    StokesL1,
    IntensityL1,
    DolpL1,
}

impl LossKind {
    pub fn parse(s: &str) -> Option<LossKind> {
        Some(match s {
            "stokes_l1" => LossKind::StokesL1,
            "intensity_l1" => LossKind::IntensityL1,
            "dolp_l1" => LossKind::DolpL1,
            _ => return None,
        })
    }

    /// Mean per-pixel, per-channel discrepancy over the whole image.
    pub fn image_loss(self, rendered: &PolarizedImage, target: &PolarizedImage) -> f64 {
        let sum: f64 = rendered
            .pixels
            .iter()
            .zip(&target.pixels)
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(s, t)| match self {
                LossKind::StokesL1 => ((s.s0 - t.s0).abs() + (s.s1 - t.s1).abs() + (s.s2 - t.s2).abs()) / 3.0,
                LossKind::IntensityL1 => (s.s0 - t.s0).abs(),
                LossKind::DolpL1 => (dolp(*s) - dolp(*t)).abs(),
            })
            .sum();
        sum / (3 * rendered.pixels.len()) as f64
    }
}

/// `steps` evenly spaced values from `lo` to `hi` inclusive.
pub fn grid(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>, InverseError> {
    if steps < 3 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(InverseError::InvalidConfig(format!("grid needs lo < hi and >= 3 steps (got {lo}, {hi}, {steps})")));
    }
    Ok((0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect())
}

/// Sets `param` of the first sphere in `scene`.
pub fn set_geometry(scene: &mut Scene, param: GeomParam, value: f64) -> Result<(), InverseError> {
    let sphere = scene
        .primitives
        .iter_mut()
        .find(|p| matches!(p.shape, Shape::Sphere { .. }))
        .ok_or_else(|| InverseError::InvalidConfig("scene has no sphere".into()))?;
    if let Shape::Sphere { center, radius } = &mut sphere.shape {
        match param {
            GeomParam::SphereRadius => {
                if !(value > 0.0) {
                    return Err(InverseError::InvalidConfig(format!("radius must be > 0 (got {value})")));
                }
                *radius = value;
            }
            GeomParam::SphereCenter(axis) => {
                let mut c: [f64; 3] = (*center).into();
                c[axis] = value;
                *center = c.into();
            }
        }
    }
    Ok(())
}

/// Loss of `loss_kind` against `obs` as one geometric parameter sweeps the
/// grid, as `(value, loss)` rows; losses are averaged over views.
pub fn landscape_scan(
    template: &Scene,
    obs: &Observations,
    param: GeomParam,
    values: &[f64],
    loss_kind: LossKind,
) -> Result<Vec<(f64, f64)>, InverseError> {
    if obs.views.is_empty() {
        return Err(InverseError::InvalidConfig("no observation views".into()));
    }
    values
        .iter()
        .map(|&v| {
            let mut scene = template.clone();
            set_geometry(&mut scene, param, v)?;
            let mut total = 0.0;
            for view in &obs.views {
                if (view.image.width, view.image.height) != (view.camera.width, view.camera.height) {
                    return Err(InverseError::DimensionMismatch("observation camera resolution".into()));
                }
                let img = render(&scene.with_camera(view.camera));
                total += loss_kind.image_loss(&img, &view.image);
            }
            Ok((v, total / obs.views.len() as f64))
        })
        .collect()
}
