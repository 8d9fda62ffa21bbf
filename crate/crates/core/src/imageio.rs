//! PFM and CSV I/O, plus the on-disk layout of a rendered view.
//!
//! PFM files are written little-endian (negative scale); both byte orders
//! are read. Pixel data is kept bottom-up in [`PfmImage`] exactly as stored.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inverse::ObservedView;
use crate::polcore::{dolp, polarizer_quad, stokes_from_polarizer, PolError, StokesVector};
use crate::renderer::{derive_images, PolarizedImage, RenderedView};
use crate::scene::Camera;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("malformed PFM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PFM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("PFM payload has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("image dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error("invalid image content: {0}")]
    Content(String),
    #[error("bad dataset metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Polarization(#[from] PolError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ImageError + '_ {
    move |source| ImageError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// Bottom-up rows, channels interleaved.
    pub data: Vec<f32>,
    /// Nonzero; the sign records the byte order of the source file.
    pub scale: f32,
}

impl PfmImage {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f32>) -> Self {
        assert!(channels == 1 || channels == 3, "PFM images have 1 or 3 channels");
        assert_eq!(data.len(), channels * width * height, "PFM data length");
        PfmImage { channels, width, height, data, scale: -1.0 }
    }

    /// Builds an image from top-down row-major pixels.
    pub fn from_top_down(channels: usize, width: usize, height: usize, top_down: &[f32]) -> Self {
        let row = width * channels;
        let data = top_down.chunks(row).rev().flatten().copied().collect();
        PfmImage::new(channels, width, height, data)
    }

    pub fn to_top_down(&self) -> Vec<f32> {
        let row = self.width * self.channels;
        self.data.chunks(row).rev().flatten().copied().collect()
    }

    pub fn from_rgb(width: usize, height: usize, px: &[[f64; 3]]) -> Self {
        let flat: Vec<f32> = px.iter().flat_map(|p| p.map(|v| v as f32)).collect();
        PfmImage::from_top_down(3, width, height, &flat)
    }

    pub fn from_gray(width: usize, height: usize, px: &[f64]) -> Self {
        let flat: Vec<f32> = px.iter().map(|v| *v as f32).collect();
        PfmImage::from_top_down(1, width, height, &flat)
    }

    /// Top-down RGB pixels; errors on single-channel images.
    pub fn rgb(&self) -> Result<Vec<[f64; 3]>, ImageError> {
        if self.channels != 3 {
            return Err(ImageError::Content(format!("expected 3 channels, found {}", self.channels)));
        }
        Ok(self.to_top_down().chunks(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect())
    }

    pub fn same_shape(&self, other: &PfmImage) -> bool {
        self.channels == other.channels && self.width == other.width && self.height == other.height
    }
}

pub fn encode_pfm(img: &PfmImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n{}\n", img.width, img.height, -img.scale.abs()).into_bytes();
    out.reserve(img.data.len() * 4);
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_pfm(path: impl AsRef<Path>, img: &PfmImage) -> Result<(), ImageError> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(img)).map_err(io_err(path))
}

/// Splits off the next whitespace-delimited header token.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, ImageError> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::MalformedHeader("unexpected end of header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| ImageError::MalformedHeader("non-ASCII header".into()))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmImage, ImageError> {
    let mut pos = 0;
    let channels = match header_token(bytes, &mut pos)? {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(ImageError::MalformedHeader(format!("bad magic {other:?}"))),
    };
    let mut dim = |what: &str| -> Result<usize, ImageError> {
        let tok = header_token(bytes, &mut pos)?;
        tok.parse::<usize>()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| ImageError::MalformedHeader(format!("bad {what} {tok:?}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let tok = header_token(bytes, &mut pos)?;
    let scale: f32 = tok
        .parse()
        .ok()
        .filter(|s: &f32| *s != 0.0 && s.is_finite())
        .ok_or_else(|| ImageError::MalformedHeader(format!("bad scale {tok:?}")))?;
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImageError::MalformedHeader("missing separator after scale".into()));
    }
    pos += 1;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels * 4))
        .ok_or_else(|| ImageError::MalformedHeader("dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(ImageError::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(ImageError::TrailingBytes(payload.len() - expected));
    }
    let little = scale < 0.0;
    let data = payload
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    Ok(PfmImage { channels, width, height, data, scale })
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<PfmImage, ImageError> {
    let path = path.as_ref();
    decode_pfm(&fs::read(path).map_err(io_err(path))?)
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

/// CSV with a header row; floats are written at round-trip precision.
pub fn write_csv(path: impl AsRef<Path>, headers: &[&str], rows: &[Vec<f64>]) -> Result<(), ImageError> {
    let text: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|v| format_f64(*v)).collect()).collect();
    write_csv_records(path, headers, &text)
}

pub fn write_csv_records(path: impl AsRef<Path>, headers: &[&str], rows: &[Vec<String>]) -> Result<(), ImageError> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(headers)?;
    for r in rows {
        if r.len() != headers.len() {
            return Err(ImageError::Content(format!("row has {} fields, header has {}", r.len(), headers.len())));
        }
        w.write_record(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn ensure_same(a: &PfmImage, b: &PfmImage, what: &str) -> Result<(), ImageError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(ImageError::DimensionMismatch(format!(
            "{what}: {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )))
    }
}

/// Per-sample DoLP of three Stokes planes.
pub fn dolp_plane(s0: &PfmImage, s1: &PfmImage, s2: &PfmImage) -> Result<PfmImage, ImageError> {
    ensure_same(s0, s1, "s1")?;
    ensure_same(s0, s2, "s2")?;
    let data = (0..s0.data.len())
        .map(|i| dolp(StokesVector::new(s0.data[i] as f64, s1.data[i] as f64, s2.data[i] as f64)) as f32)
        .collect();
    Ok(PfmImage { data, scale: -1.0, ..s0.clone() })
}

/// Polarizer planes at 0°, 45°, 90°, 135° from Stokes planes.
pub fn polarizer_planes(s0: &PfmImage, s1: &PfmImage, s2: &PfmImage) -> Result<[PfmImage; 4], ImageError> {
    ensure_same(s0, s1, "s1")?;
    ensure_same(s0, s2, "s2")?;
    let quads: Vec<[f64; 4]> = (0..s0.data.len())
        .map(|i| polarizer_quad(StokesVector::new(s0.data[i] as f64, s1.data[i] as f64, s2.data[i] as f64)))
        .collect();
    Ok([0, 1, 2, 3].map(|k| PfmImage {
        data: quads.iter().map(|q| q[k] as f32).collect(),
        scale: -1.0,
        ..s0.clone()
    }))
}

/// Stokes planes from four polarizer planes.
pub fn stokes_planes(pol: &[PfmImage; 4]) -> Result<[PfmImage; 3], ImageError> {
    for (k, p) in pol.iter().enumerate().skip(1) {
        ensure_same(&pol[0], p, &format!("polarizer image {k}"))?;
    }
    let stokes = (0..pol[0].data.len())
        .map(|i| {
            let v = |k: usize| pol[k].data[i] as f64;
            stokes_from_polarizer(v(0), v(1), v(2), v(3))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok([0, 1, 2].map(|k| PfmImage {
        data: stokes.iter().map(|s| s.to_array()[k] as f32).collect(),
        scale: -1.0,
        ..pol[0].clone()
    }))
}

pub const VIEW_FILES: [&str; 10] =
    ["s0", "s1", "s2", "dolp", "i000", "i045", "i090", "i135", "mask", "conductor_mask"];

/// Writes the ten PFM planes of one view into `dir`.
pub fn write_view(dir: impl AsRef<Path>, view: &RenderedView) -> Result<(), ImageError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (w, h) = (view.image.width, view.image.height);
    let d = derive_images(&view.image);
    let s = [0, 1, 2].map(|k| PfmImage::from_rgb(w, h, &view.image.component(k)));
    let dolp = dolp_plane(&s[0], &s[1], &s[2])?;
    let mask = |m: &[bool]| PfmImage::from_gray(w, h, &m.iter().map(|b| f64::from(u8::from(*b))).collect::<Vec<_>>());
    let planes = [
        &s[0],
        &s[1],
        &s[2],
        &dolp,
        &PfmImage::from_rgb(w, h, &d.i000),
        &PfmImage::from_rgb(w, h, &d.i045),
        &PfmImage::from_rgb(w, h, &d.i090),
        &PfmImage::from_rgb(w, h, &d.i135),
        &mask(&view.mask),
        &mask(&view.conductor_mask),
    ];
    for (name, img) in VIEW_FILES.iter().zip(planes) {
        write_pfm(dir.join(format!("{name}.pfm")), img)?;
    }
    Ok(())
}

/// Reads the Stokes planes and masks of a view written by [`write_view`].
pub fn read_view(dir: impl AsRef<Path>) -> Result<RenderedView, ImageError> {
    let dir = dir.as_ref();
    let load = |name: &str| read_pfm(dir.join(format!("{name}.pfm")));
    let s = [load("s0")?, load("s1")?, load("s2")?];
    ensure_same(&s[0], &s[1], "s1")?;
    ensure_same(&s[0], &s[2], "s2")?;
    let (w, h) = (s[0].width, s[0].height);
    let rgb = [s[0].rgb()?, s[1].rgb()?, s[2].rgb()?];
    let image = PolarizedImage::from_components(w, h, &rgb[0], &rgb[1], &rgb[2]);
    let read_mask = |name: &str| -> Result<Vec<bool>, ImageError> {
        let m = load(name)?;
        if m.channels != 1 || m.width != w || m.height != h {
            return Err(ImageError::DimensionMismatch(format!("{name} does not match s0")));
        }
        m.to_top_down()
            .into_iter()
            .map(|v| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                _ => Err(ImageError::Content(format!("{name} is not binary (value {v})"))),
            })
            .collect()
    };
    Ok(RenderedView { image, mask: read_mask("mask")?, conductor_mask: read_mask("conductor_mask")? })
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), ImageError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Camera pose of one view and its subdirectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewMeta {
    pub dir: String,
    pub camera: Camera,
}

/// Contents of a dataset's `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub scene: String,
    pub seed: u64,
    pub hemisphere_samples: usize,
    pub env_scale: f64,
    pub views: Vec<ViewMeta>,
}

pub const META_FILE: &str = "meta.json";

pub fn read_meta(dir: impl AsRef<Path>) -> Result<DatasetMeta, ImageError> {
    let path = dir.as_ref().join(META_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| ImageError::Meta(format!("{}: {e}", path.display())))
}

/// Metadata plus every view listed in it, as observations.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetMeta, Vec<ObservedView>), ImageError> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    if meta.views.is_empty() {
        return Err(ImageError::Meta("dataset lists no views".into()));
    }
    let views = meta
        .views
        .iter()
        .map(|v| {
            let view = read_view(dir.join(&v.dir))?;
            if (view.image.width, view.image.height) != (v.camera.width, v.camera.height) {
                return Err(ImageError::DimensionMismatch(format!("{}: image size differs from camera", v.dir)));
            }
            Ok(ObservedView { camera: v.camera, image: view.image, mask: view.mask })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((meta, views))
}
