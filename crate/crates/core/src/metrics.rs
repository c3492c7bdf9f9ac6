//! Depth-completion error metrics and trajectory metrics for pose
//! estimation.
//!
//! Depth errors are reported in millimeters (MAE, RMSE) and inverse
//! kilometers (iMAE, iRMSE). Trajectory metrics follow the usual SLAM
//! definitions without similarity alignment: the estimated trajectory is
//! anchored to the ground truth at its first pose.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{compose, inverse, log_so3, Mat3, Pose, Rotation, Vec3};
use crate::scaffold::DenseDepthMap;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no valid ground-truth pixels")]
    EmptyGroundTruth,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("trajectory too short: need at least {needed} poses, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("non-positive predicted depth {0} at a ground-truth pixel")]
    NonPositivePrediction(f64),
    #[error("bin edges must be strictly increasing and at least two")]
    BadBins,
    #[error("timestamps must be strictly increasing")]
    Timestamps,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
}

/// Error statistics of a predicted depth map against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthErrorReport {
    pub mae_mm: f64,
    pub rmse_mm: f64,
    pub imae_per_km: f64,
    pub irmse_per_km: f64,
    /// Number of evaluated pixels.
    pub count: usize,
}

fn evaluated_pixels<'a>(
    pred: &'a DenseDepthMap,
    gt: &'a DenseDepthMap,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a, MetricsError> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(MetricsError::ShapeMismatch(format!(
            "prediction {}×{} vs ground truth {}×{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let pixels = (0..gt.len()).filter(|&i| gt.validity[i] && gt.depth[i] > 0.0);
    if let Some(bad) = pixels.clone().map(|i| pred.depth[i]).find(|&z| !(z > 0.0)) {
        return Err(MetricsError::NonPositivePrediction(bad));
    }
    Ok(pixels.map(|i| (pred.depth[i], gt.depth[i])))
}

/// MAE/RMSE in mm and iMAE/iRMSE in 1/km over valid, positive
/// ground-truth pixels.
pub fn depth_errors(pred: &DenseDepthMap, gt: &DenseDepthMap) -> Result<DepthErrorReport, MetricsError> {
    let (mut abs, mut sq, mut iabs, mut isq, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (p, g) in evaluated_pixels(pred, gt)? {
        let e = 1000.0 * (p - g);
        let ie = 1000.0 / p - 1000.0 / g;
        abs += e.abs();
        sq += e * e;
        iabs += ie.abs();
        isq += ie * ie;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let n_f = n as f64;
    Ok(DepthErrorReport {
        mae_mm: abs / n_f,
        rmse_mm: (sq / n_f).sqrt(),
        imae_per_km: iabs / n_f,
        irmse_per_km: (isq / n_f).sqrt(),
        count: n,
    })
}

/// Absolute-error statistics of one ground-truth distance bin `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Share of all binned ground-truth pixels falling in this bin.
    pub fraction: f64,
    /// Mean, 5th and 95th percentile of `|pred − gt|` in meters; `None` for
    /// an empty bin.
    pub mean_abs_error: Option<f64>,
    pub p05: Option<f64>,
    pub p95: Option<f64>,
}

/// Linear-interpolation percentile of sorted data, `q ∈ [0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Error as a function of ground-truth distance. Pixels whose ground truth
/// lies outside every bin are ignored.
pub fn error_vs_distance(
    pred: &DenseDepthMap,
    gt: &DenseDepthMap,
    edges: &[f64],
) -> Result<Vec<DistanceBin>, MetricsError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(MetricsError::BadBins);
    }
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); edges.len() - 1];
    let mut any = false;
    for (p, g) in evaluated_pixels(pred, gt)? {
        any = true;
        let k = edges.partition_point(|&e| e <= g);
        if k >= 1 && k < edges.len() {
            errors[k - 1].push((p - g).abs());
        }
    }
    if !any {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let total: usize = errors.iter().map(Vec::len).sum();
    Ok(errors
        .into_iter()
        .enumerate()
        .map(|(i, mut e)| {
            e.sort_by(f64::total_cmp);
            let n = e.len();
            DistanceBin {
                lo: edges[i],
                hi: edges[i + 1],
                count: n,
                fraction: if total > 0 { n as f64 / total as f64 } else { 0.0 },
                mean_abs_error: (n > 0).then(|| e.iter().sum::<f64>() / n as f64),
                p05: (n > 0).then(|| percentile(&e, 0.05)),
                p95: (n > 0).then(|| percentile(&e, 0.95)),
            }
        })
        .collect())
}

/// Time-ordered absolute camera poses (camera to world).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub timestamps: Vec<f64>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>, timestamps: Vec<f64>) -> Result<Self, MetricsError> {
        if poses.len() != timestamps.len() {
            return Err(MetricsError::LengthMismatch(poses.len(), timestamps.len()));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MetricsError::Timestamps);
        }
        Ok(Self { poses, timestamps })
    }

    /// Poses stamped `0, 1, 2, …`.
    pub fn from_poses(poses: Vec<Pose>) -> Self {
        let timestamps = (0..poses.len()).map(|i| i as f64).collect();
        Self { poses, timestamps }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// `g_t⁻¹ g_{t+Δ}` for every `t`.
    pub fn relative_poses(&self, delta: usize) -> Vec<Pose> {
        (0..self.len().saturating_sub(delta))
            .map(|t| compose(&inverse(&self.poses[t]), &self.poses[t + delta]))
            .collect()
    }

    /// Reads `timestamp tx ty tz r11 r12 r13 r21 r22 r23 r31 r32 r33` lines;
    /// blank lines and `#` comments are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| MetricsError::Io { path: name.clone(), source: e })?;
        let (mut poses, mut stamps) = (Vec::new(), Vec::new());
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| MetricsError::Io { path: name.clone(), source: e })?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let parse_err = |reason: String| MetricsError::Parse { path: name.clone(), line: i + 1, reason };
            let values: Vec<f64> = body
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{t:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            if values.len() != 13 {
                return Err(parse_err(format!("expected 13 values, found {}", values.len())));
            }
            stamps.push(values[0]);
            let t = Vec3::new(values[1], values[2], values[3]);
            poses.push(Pose::new(Rotation(Mat3::from_row_slice(&values[4..13])), t));
        }
        Self::new(poses, stamps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let path = path.as_ref();
        let io = |e| MetricsError::Io { path: path.display().to_string(), source: e };
        let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "# timestamp tx ty tz r11 r12 r13 r21 r22 r23 r31 r32 r33").map_err(io)?;
        for (s, p) in self.timestamps.iter().zip(&self.poses) {
            let r = &p.rotation.0;
            let t = &p.translation;
            write!(w, "{s:?} {:?} {:?} {:?}", t.x, t.y, t.z).map_err(io)?;
            for i in 0..3 {
                for j in 0..3 {
                    write!(w, " {:?}", r[(i, j)]).map_err(io)?;
                }
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Chains pairwise motions `g_{t,t+1}` into absolute poses starting at the
/// identity.
pub fn chain(relative: &[Pose]) -> Trajectory {
    let mut poses = Vec::with_capacity(relative.len() + 1);
    poses.push(Pose::identity());
    for r in relative {
        let last = *poses.last().expect("non-empty");
        poses.push(compose(&last, r));
    }
    Trajectory::from_poses(poses)
}

fn check_lengths(est: &Trajectory, gt: &Trajectory, needed: usize) -> Result<(), MetricsError> {
    if est.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(est.len(), gt.len()));
    }
    if est.len() < needed {
        return Err(MetricsError::TooShort { needed, have: est.len() });
    }
    Ok(())
}

/// Sum of squared anchored position errors over `[start, start + len)`,
/// optionally after the least-squares scale of the estimate.
fn anchored_squared_errors(est: &[Pose], gt: &[Pose], scaled: bool) -> f64 {
    let anchor = compose(&gt[0], &inverse(&est[0]));
    let aligned: Vec<Vec3> = est.iter().map(|e| compose(&anchor, e).translation).collect();
    let scale = if scaled {
        // scale about the shared first position
        let o = gt[0].translation;
        let (num, den) = aligned
            .iter()
            .zip(gt)
            .fold((0.0, 0.0), |(n, d), (a, g)| (n + (a - o).dot(&(g.translation - o)), d + (a - o).norm_squared()));
        if den > 0.0 {
            num / den
        } else {
            1.0
        }
    } else {
        1.0
    };
    let o = gt[0].translation;
    aligned
        .iter()
        .zip(gt)
        .map(|(a, g)| {
            let a = o + (a - o) * scale;
            // trans(g⁻¹ ĝ) = Rᵀ(t̂ − t); its norm is rotation invariant
            (a - g.translation).norm_squared()
        })
        .sum()
}

/// Absolute trajectory error after anchoring the first estimated pose to
/// the first ground-truth pose, meters.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64, MetricsError> {
    check_lengths(est, gt, 1)?;
    Ok((anchored_squared_errors(&est.poses, &gt.poses, false) / est.len() as f64).sqrt())
}

/// Root mean square of the ATE of every 5-frame window, each window
/// re-anchored at its first pose. With `scaled`, each window's estimate is
/// additionally rescaled by its least-squares scale.
pub fn ate_5f(est: &Trajectory, gt: &Trajectory, scaled: bool) -> Result<f64, MetricsError> {
    const WINDOW: usize = 5;
    check_lengths(est, gt, WINDOW)?;
    let windows = est.len() - WINDOW + 1;
    let sum: f64 = (0..windows)
        .map(|s| anchored_squared_errors(&est.poses[s..s + WINDOW], &gt.poses[s..s + WINDOW], scaled) / WINDOW as f64)
        .sum();
    Ok((sum / windows as f64).sqrt())
}

fn check_relative(est: &[Pose], gt: &[Pose]) -> Result<(), MetricsError> {
    if est.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(est.len(), gt.len()));
    }
    if est.is_empty() {
        return Err(MetricsError::TooShort { needed: 1, have: 0 });
    }
    Ok(())
}

/// RPE from matched relative motions `ĝ_{tτ}` and `g_{tτ}`, meters.
pub fn rpe_relative(est: &[Pose], gt: &[Pose]) -> Result<f64, MetricsError> {
    check_relative(est, gt)?;
    let sum: f64 = est.iter().zip(gt).map(|(e, g)| compose(&inverse(g), e).translation.norm_squared()).sum();
    Ok((sum / est.len() as f64).sqrt())
}

/// RRE from matched relative motions, radians.
pub fn rre_relative(est: &[Pose], gt: &[Pose]) -> Result<f64, MetricsError> {
    check_relative(est, gt)?;
    let sum: f64 = est
        .iter()
        .zip(gt)
        .map(|(e, g)| {
            let r = Rotation(g.rotation.0.transpose() * e.rotation.0);
            log_so3(&r).0.norm_squared()
        })
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}

/// Relative pose error over windows of `delta` frames, meters.
pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: usize) -> Result<f64, MetricsError> {
    check_lengths(est, gt, delta + 1)?;
    rpe_relative(&est.relative_poses(delta), &gt.relative_poses(delta))
}

/// Relative rotation error over windows of `delta` frames, radians.
pub fn rre(est: &Trajectory, gt: &Trajectory, delta: usize) -> Result<f64, MetricsError> {
    check_lengths(est, gt, delta + 1)?;
    rre_relative(&est.relative_poses(delta), &gt.relative_poses(delta))
}

/// Every trajectory metric with the rotation error in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseErrorReport {
    pub ate_m: f64,
    pub ate5f_m: Option<f64>,
    pub rpe_m: f64,
    pub rre_deg: f64,
}

/// ATE, ATE-5F (when at least five poses), RPE and RRE with `Δ = 1`.
pub fn pose_errors(est: &Trajectory, gt: &Trajectory, scaled_ate5f: bool) -> Result<PoseErrorReport, MetricsError> {
    Ok(PoseErrorReport {
        ate_m: ate(est, gt)?,
        ate5f_m: if est.len() >= 5 { Some(ate_5f(est, gt, scaled_ate5f)?) } else { None },
        rpe_m: rpe(est, gt, 1)?,
        rre_deg: rre(est, gt, 1)?.to_degrees(),
    })
}
