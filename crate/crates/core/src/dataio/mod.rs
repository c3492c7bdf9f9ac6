//! File formats and dataset plumbing.
//!
//! * Depth maps: 16-bit single-channel PNG, `depth_m = pixel / 256`, pixel 0
//!   marks a missing value.
//! * Images: 8-bit PNG, loaded as `[3, H, W]` arrays in `[0, 1]`.
//! * Intrinsics: JSON `{fx, fy, cx, cy, width, height}`.
//! * Sparse depth: JSON `{"width", "height", "points": [[u, v, z], ...]}` or
//!   a depth PNG.
//! * Datasets: JSON-lines manifests, see [`manifest`].

pub mod manifest;
pub mod synthetic;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffgraph::Array;
use crate::geometry::CameraIntrinsics;
use crate::scaffold::{DenseDepthMap, ScaffoldError, SparseDepthMap, SparsePoint};

pub use manifest::{DatasetManifest, LoadedRecord, ManifestRecord, PoseRecord};
pub use synthetic::{generate_synthetic, generate_triplets, SceneConfig, SyntheticTriplet};

/// Depth PNG quantization: one unit is 1/256 m.
pub const DEPTH_PNG_SCALE: f64 = 256.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad format: {reason}")]
    BadFormat { path: PathBuf, reason: String },
    #[error("insufficient valid pixels: need {needed}, have {available}")]
    InsufficientValidPixels { needed: usize, available: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }

    fn format(path: &Path, reason: impl ToString) -> Self {
        DataError::BadFormat { path: path.to_path_buf(), reason: reason.to_string() }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path).map(BufReader::new).map_err(|e| DataError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, DataError> {
    File::create(path).map(BufWriter::new).map_err(|e| DataError::io(path, e))
}

struct RawImage {
    width: usize,
    height: usize,
    channels: usize,
    sixteen_bit: bool,
    bytes: Vec<u8>,
}

fn decode_png(path: &Path) -> Result<RawImage, DataError> {
    let mut decoder = png::Decoder::new(open(path)?);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| DataError::format(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| DataError::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| DataError::format(path, e))?;
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(DataError::format(path, "unexpanded palette image")),
    };
    let sixteen_bit = match info.bit_depth {
        png::BitDepth::Sixteen => true,
        png::BitDepth::Eight => false,
        d => return Err(DataError::format(path, format!("unsupported bit depth {d:?}"))),
    };
    Ok(RawImage { width: info.width as usize, height: info.height as usize, channels, sixteen_bit, bytes: buf })
}

fn encode_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<(), DataError> {
    let w = create(path)?;
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(|e| DataError::format(path, e))?;
    writer.write_image_data(data).map_err(|e| DataError::format(path, e))?;
    writer.finish().map_err(|e| DataError::format(path, e))
}

/// Reads a 16-bit single-channel depth PNG.
pub fn read_depth_png(path: impl AsRef<Path>) -> Result<DenseDepthMap, DataError> {
    let path = path.as_ref();
    let raw = decode_png(path)?;
    if raw.channels != 1 || !raw.sixteen_bit {
        return Err(DataError::format(path, "depth maps must be 16-bit single-channel PNG"));
    }
    let depth = raw.bytes.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / DEPTH_PNG_SCALE).collect();
    Ok(DenseDepthMap::from_depth(raw.width, raw.height, depth))
}

/// Quantized PNG value of a depth; invalid or non-positive depths map to 0
/// and positive depths are kept at least 1/256 m.
pub fn depth_to_png_value(z: f64, valid: bool) -> u16 {
    if !valid || !(z > 0.0) {
        return 0;
    }
    (z * DEPTH_PNG_SCALE).round().clamp(1.0, u16::MAX as f64) as u16
}

/// Writes a 16-bit depth PNG; invalid pixels are stored as 0.
pub fn write_depth_png(path: impl AsRef<Path>, map: &DenseDepthMap) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(map.len() * 2);
    for (&z, &valid) in map.depth.iter().zip(&map.validity) {
        bytes.extend_from_slice(&depth_to_png_value(z, valid).to_be_bytes());
    }
    encode_png(path.as_ref(), map.width, map.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

/// Reads an RGB(A) or grayscale PNG into a `[3, H, W]` array in `[0, 1]`.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<Array, DataError> {
    let path = path.as_ref();
    let raw = decode_png(path)?;
    let (h, w) = (raw.height, raw.width);
    let bps = if raw.sixteen_bit { 2 } else { 1 };
    let max = if raw.sixteen_bit { 65535.0 } else { 255.0 };
    let sample = |p: usize, c: usize| {
        let i = (p * raw.channels + c) * bps;
        let v = if raw.sixteen_bit {
            u16::from_be_bytes([raw.bytes[i], raw.bytes[i + 1]]) as f64
        } else {
            raw.bytes[i] as f64
        };
        v / max
    };
    Ok(Array::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        if raw.channels >= 3 {
            sample(p, c)
        } else {
            sample(p, 0)
        }
    }))
}

/// Writes a `[3, H, W]` array in `[0, 1]` as an 8-bit RGB PNG.
pub fn write_rgb_png(path: impl AsRef<Path>, image: &Array) -> Result<(), DataError> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(DataError::InvalidArgument(format!("expected a [3, H, W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut bytes = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            bytes.push((image.data()[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    encode_png(path.as_ref(), w, h, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

/// Writes a depth map as an 8-bit grayscale visualization (near = bright).
pub fn write_depth_preview(path: impl AsRef<Path>, map: &DenseDepthMap, max_depth: f64) -> Result<(), DataError> {
    let bytes: Vec<u8> = map
        .depth
        .iter()
        .zip(&map.validity)
        .map(|(&z, &v)| if v && z > 0.0 { (255.0 * (1.0 - (z / max_depth).min(1.0))).round() as u8 } else { 0 })
        .collect();
    encode_png(path.as_ref(), map.width, map.height, png::ColorType::Grayscale, png::BitDepth::Eight, &bytes)
}

/// Writes a boolean mask as an 8-bit grayscale PNG (true = 255).
pub fn write_mask_png(path: impl AsRef<Path>, width: usize, height: usize, mask: &[bool]) -> Result<(), DataError> {
    if mask.len() != width * height {
        return Err(DataError::InvalidArgument(format!("mask has {} pixels, expected {width}×{height}", mask.len())));
    }
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    encode_png(path.as_ref(), width, height, png::ColorType::Grayscale, png::BitDepth::Eight, &bytes)
}

pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics, DataError> {
    let path = path.as_ref();
    let k: CameraIntrinsics = serde_json::from_reader(open(path)?).map_err(|e| DataError::format(path, e))?;
    k.validate().map_err(|e| DataError::format(path, e))?;
    Ok(k)
}

pub fn write_intrinsics(path: impl AsRef<Path>, k: &CameraIntrinsics) -> Result<(), DataError> {
    let path = path.as_ref();
    serde_json::to_writer_pretty(create(path)?, k).map_err(|e| DataError::format(path, e))
}

#[derive(Serialize, Deserialize)]
struct SparseFile {
    width: usize,
    height: usize,
    points: Vec<[f64; 3]>,
}

fn sparse_error(path: &Path, e: ScaffoldError) -> DataError {
    DataError::format(path, e)
}

/// Reads sparse depth from JSON, or from a depth PNG when the extension is
/// `.png`.
pub fn read_sparse(path: impl AsRef<Path>) -> Result<SparseDepthMap, DataError> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        return Ok(SparseDepthMap::from_dense(&read_depth_png(path)?));
    }
    let f: SparseFile = serde_json::from_reader(open(path)?).map_err(|e| DataError::format(path, e))?;
    let mut points = Vec::with_capacity(f.points.len());
    for [u, v, z] in f.points {
        if u < 0.0 || v < 0.0 || u.fract() != 0.0 || v.fract() != 0.0 {
            return Err(DataError::format(
                path,
                format!("pixel coordinates must be non-negative integers, got ({u}, {v})"),
            ));
        }
        points.push(SparsePoint { u: u as usize, v: v as usize, z });
    }
    SparseDepthMap::new(f.width, f.height, points).map_err(|e| sparse_error(path, e))
}

/// Writes sparse depth as JSON, or as a depth PNG when the extension is
/// `.png`.
pub fn write_sparse(path: impl AsRef<Path>, sparse: &SparseDepthMap) -> Result<(), DataError> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        return write_depth_png(path, &sparse.to_dense());
    }
    let f = SparseFile {
        width: sparse.width(),
        height: sparse.height(),
        points: sparse.points().iter().map(|p| [p.u as f64, p.v as f64, p.z]).collect(),
    };
    serde_json::to_writer(create(path)?, &f).map_err(|e| DataError::format(path, e))
}

/// Number of points selected for `density` of `pixels`.
pub fn sparse_point_count(pixels: usize, density: f64) -> usize {
    (density * pixels as f64).round() as usize
}

/// Uniform random subset of the valid ground-truth pixels without
/// replacement. The number of points is `round(density · width · height)`.
pub fn subsample_sparse(gt: &DenseDepthMap, density: f64, seed: u64) -> Result<SparseDepthMap, DataError> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(DataError::InvalidArgument(format!("density {density} must lie in (0, 1]")));
    }
    let valid: Vec<usize> = (0..gt.len()).filter(|&i| gt.validity[i] && gt.depth[i] > 0.0).collect();
    let needed = if density == 1.0 { valid.len() } else { sparse_point_count(gt.len(), density) };
    if needed > valid.len() || valid.is_empty() {
        return Err(DataError::InsufficientValidPixels { needed, available: valid.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = sample(&mut rng, valid.len(), needed).into_iter().map(|k| valid[k]).collect();
    chosen.sort_unstable();
    let points = chosen.into_iter().map(|i| SparsePoint { u: i % gt.width, v: i / gt.width, z: gt.depth[i] });
    SparseDepthMap::new(gt.width, gt.height, points).map_err(|e| DataError::InvalidArgument(e.to_string()))
}

/// Named sparse densities as fractions of a 640×480 frame, matching
/// 1500 / 500 / 150 tracked features.
pub const DENSITY_PRESETS: [(&str, f64); 3] = [("0.5%", 0.005), ("0.15%", 0.0015), ("0.05%", 0.0005)];
