//! JSON-lines dataset manifests.
//!
//! Each non-empty line is one record:
//!
//! ```json
//! {"image_prev": "a.png", "image_curr": "b.png", "image_next": "c.png",
//!  "sparse_depth": "b_sparse.json", "ground_truth": "b_gt.png",
//!  "intrinsics": "K.json",
//!  "pose_prev": {"rotation": [r11, ..., r33], "translation": [tx, ty, tz]},
//!  "pose_next": {...}}
//! ```
//!
//! Paths are relative to the manifest's directory. `ground_truth`,
//! `pose_prev` and `pose_next` are optional. `pose_prev` maps points from
//! the current camera into the previous one (and `pose_next` into the next
//! one); they replace the pose network when present.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{open, read_depth_png, read_intrinsics, read_rgb_png, read_sparse, DataError};
use crate::geometry::{Mat3, Pose, Rotation, Vec3};
use crate::losses::FrameTriplet;
use crate::scaffold::DenseDepthMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Row-major rotation matrix.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let m = &p.rotation.0;
        Self {
            rotation: std::array::from_fn(|i| m[(i / 3, i % 3)]),
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(r: &PoseRecord) -> Self {
        Pose::new(Rotation(Mat3::from_row_slice(&r.rotation)), Vec3::from(r.translation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_prev: String,
    pub image_curr: String,
    pub image_next: String,
    pub sparse_depth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    pub intrinsics: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_prev: Option<PoseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_next: Option<PoseRecord>,
}

/// A record with every referenced file loaded.
#[derive(Debug, Clone)]
pub struct LoadedRecord {
    pub triplet: FrameTriplet,
    pub ground_truth: Option<DenseDepthMap>,
    pub pose_prev: Option<Pose>,
    pub pose_next: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

fn png_size(path: &Path) -> Result<(usize, usize), DataError> {
    let reader = png::Decoder::new(open(path)?).read_info().map_err(|e| DataError::format(path, e))?;
    let info = reader.info();
    Ok((info.width as usize, info.height as usize))
}

impl DatasetManifest {
    pub fn new(base_dir: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Self {
        Self { base_dir: base_dir.into(), records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Parses a manifest and checks that every referenced file exists, that
    /// the three images of a record share one size and that the intrinsics
    /// describe that size.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut records = Vec::new();
        for (i, line) in open(path)?.lines().enumerate() {
            let line = line.map_err(|e| DataError::Io { path: path.to_path_buf(), source: e })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord =
                serde_json::from_str(&line).map_err(|e| DataError::Manifest { line: i + 1, reason: e.to_string() })?;
            records.push(rec);
        }
        let m = Self { base_dir, records };
        for (i, rec) in m.records.iter().enumerate() {
            m.check_record(rec).map_err(|e| DataError::Manifest { line: i + 1, reason: e.to_string() })?;
        }
        Ok(m)
    }

    fn check_record(&self, rec: &ManifestRecord) -> Result<(), DataError> {
        let mut files = vec![&rec.image_prev, &rec.image_curr, &rec.image_next, &rec.sparse_depth, &rec.intrinsics];
        files.extend(rec.ground_truth.as_ref());
        for f in files {
            let p = self.resolve(f);
            if !p.is_file() {
                return Err(DataError::InvalidArgument(format!("missing file {}", p.display())));
            }
        }
        let size = png_size(&self.resolve(&rec.image_curr))?;
        for other in [&rec.image_prev, &rec.image_next] {
            let s = png_size(&self.resolve(other))?;
            if s != size {
                return Err(DataError::InvalidArgument(format!(
                    "image {other} is {}×{}, expected {}×{}",
                    s.0, s.1, size.0, size.1
                )));
            }
        }
        let k = read_intrinsics(self.resolve(&rec.intrinsics))?;
        if (k.width, k.height) != size {
            return Err(DataError::InvalidArgument(format!(
                "intrinsics describe {}×{} but images are {}×{}",
                k.width, k.height, size.0, size.1
            )));
        }
        Ok(())
    }

    /// Writes the records as JSON lines.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let mut w = super::create(path)?;
        for rec in &self.records {
            let line = serde_json::to_string(rec).map_err(|e| DataError::format(path, e))?;
            writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
        }
        w.flush().map_err(|e| DataError::io(path, e))
    }

    pub fn load_record(&self, index: usize) -> Result<LoadedRecord, DataError> {
        let rec = self
            .records
            .get(index)
            .ok_or_else(|| DataError::InvalidArgument(format!("record {index} out of range")))?;
        let triplet = FrameTriplet {
            image_prev: read_rgb_png(self.resolve(&rec.image_prev))?,
            image_curr: read_rgb_png(self.resolve(&rec.image_curr))?,
            image_next: read_rgb_png(self.resolve(&rec.image_next))?,
            sparse: read_sparse(self.resolve(&rec.sparse_depth))?,
            intrinsics: read_intrinsics(self.resolve(&rec.intrinsics))?,
        };
        triplet.validate().map_err(|e| DataError::InvalidArgument(e.to_string()))?;
        let ground_truth = rec.ground_truth.as_ref().map(|p| read_depth_png(self.resolve(p))).transpose()?;
        Ok(LoadedRecord {
            triplet,
            ground_truth,
            pose_prev: rec.pose_prev.as_ref().map(Pose::from),
            pose_next: rec.pose_next.as_ref().map(Pose::from),
        })
    }
}
