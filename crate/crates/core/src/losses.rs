//! The unsupervised training objective.
//!
//! `L = w_ph·L_ph + w_sz·L_sz + w_pc·L_pc + w_sm·L_sm` where
//!
//! * `L_ph` compares `I_t` with reconstructions warped from its temporal
//!   neighbours using the predicted depth and relative pose
//!   (`w_co·|I_t − Î_τ| + w_st·(1 − SSIM)`, averaged over valid pixels,
//!   summed over neighbours),
//! * `L_sz` is the mean absolute deviation from the sparse depth on its
//!   support,
//! * `L_pc` is `‖log(g_τt · g_tτ)‖²` summed over neighbours,
//! * `L_sm` is an edge-aware L1 penalty on forward differences of depth.
//!
//! Ground truth never enters any term. All functions build nodes on a
//! caller-provided [`Graph`]; images are `[B, C, H, W]`, depth maps
//! `[B, 1, H, W]`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffgraph::{Array, Graph, GraphError, NodeId};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::scaffold::SparseDepthMap;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("invalid loss configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid frame triplet: {0}")]
    InvalidTriplet(String),
}

/// Non-negative weights of the objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_ph: f64,
    pub w_co: f64,
    pub w_st: f64,
    pub w_sz: f64,
    pub w_pc: f64,
    pub w_sm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::kitti()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    preset: Option<String>,
    w_ph: Option<f64>,
    w_co: Option<f64>,
    w_st: Option<f64>,
    w_sz: Option<f64>,
    w_pc: Option<f64>,
    w_sm: Option<f64>,
}

impl LossWeights {
    /// Outdoor driving weights.
    pub fn kitti() -> Self {
        Self { w_ph: 1.00, w_co: 0.20, w_st: 0.40, w_sz: 0.20, w_pc: 0.10, w_sm: 0.01 }
    }

    /// Indoor/outdoor visual-inertial weights: stronger sparse and
    /// smoothness terms.
    pub fn void() -> Self {
        Self { w_sz: 1.00, w_sm: 0.10, ..Self::kitti() }
    }

    pub fn zero() -> Self {
        Self { w_ph: 0.0, w_co: 0.0, w_st: 0.0, w_sz: 0.0, w_pc: 0.0, w_sm: 0.0 }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "kitti" => Some(Self::kitti()),
            "void" => Some(Self::void()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let fields = [
            ("w_ph", self.w_ph),
            ("w_co", self.w_co),
            ("w_st", self.w_st),
            ("w_sz", self.w_sz),
            ("w_pc", self.w_pc),
            ("w_sm", self.w_sm),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LossError::InvalidWeights(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Parses TOML with optional `preset = "kitti" | "void"` (default
    /// kitti) and any of the six weight keys as overrides.
    pub fn from_toml_str(s: &str) -> Result<Self, LossError> {
        let f: WeightsFile = toml::from_str(s).map_err(|e| LossError::Config(e.to_string()))?;
        let base = match f.preset.as_deref() {
            None => Self::kitti(),
            Some(p) => Self::preset(p).ok_or_else(|| LossError::Config(format!("unknown preset {p:?}")))?,
        };
        let w = Self {
            w_ph: f.w_ph.unwrap_or(base.w_ph),
            w_co: f.w_co.unwrap_or(base.w_co),
            w_st: f.w_st.unwrap_or(base.w_st),
            w_sz: f.w_sz.unwrap_or(base.w_sz),
            w_pc: f.w_pc.unwrap_or(base.w_pc),
            w_sm: f.w_sm.unwrap_or(base.w_sm),
        };
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LossError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Three consecutive RGB frames (`[3, H, W]`, values in `[0, 1]`) with the
/// sparse depth and intrinsics of the middle frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTriplet {
    pub image_prev: Array,
    pub image_curr: Array,
    pub image_next: Array,
    pub sparse: SparseDepthMap,
    pub intrinsics: CameraIntrinsics,
}

impl FrameTriplet {
    pub fn height(&self) -> usize {
        self.image_curr.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image_curr.shape()[2]
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let s = self.image_curr.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(LossError::InvalidTriplet(format!("images must be [3, H, W], got {s:?}")));
        }
        if self.image_prev.shape() != s || self.image_next.shape() != s {
            return Err(LossError::InvalidTriplet("frames differ in shape".into()));
        }
        if self.sparse.width() != s[2] || self.sparse.height() != s[1] {
            return Err(LossError::InvalidTriplet("sparse depth does not match image size".into()));
        }
        if self.intrinsics.width != s[2] || self.intrinsics.height != s[1] {
            return Err(LossError::InvalidTriplet("intrinsics do not match image size".into()));
        }
        Ok(())
    }
}

/// Relative pose nodes: rotation `[B, 3, 3]` and translation `[B, 3]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseNodes {
    pub rotation: NodeId,
    pub translation: NodeId,
}

impl PoseNodes {
    /// Constant nodes holding one pose per batch element.
    pub fn constant(g: &mut Graph, poses: &[Pose]) -> Self {
        let b = poses.len();
        let r = Array::from_fn(&[b, 3, 3], |i| poses[i / 9].rotation.0[((i % 9) / 3, i % 3)]);
        let t = Array::from_fn(&[b, 3], |i| poses[i / 3].translation[i % 3]);
        Self { rotation: g.constant(r), translation: g.constant(t) }
    }
}

/// `a · b` as rigid motions: `(R_a R_b, R_a t_b + t_a)`.
pub fn compose_poses(g: &mut Graph, a: PoseNodes, b: PoseNodes) -> Result<PoseNodes, GraphError> {
    let batch = g.shape(a.translation)[0];
    let rotation = g.matmul(a.rotation, b.rotation)?;
    let tb = g.reshape(b.translation, &[batch, 3, 1])?;
    let rt = g.matmul(a.rotation, tb)?;
    let rt = g.reshape(rt, &[batch, 3])?;
    let translation = g.add(rt, a.translation)?;
    Ok(PoseNodes { rotation, translation })
}

/// Warped neighbour image and its validity mask (`[B, 1, H, W]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstruction {
    pub image: NodeId,
    pub mask: NodeId,
}

/// Reconstructs `I_t` by sampling `image_tau` where each pixel lands under
/// `depth` and the motion `pose` (camera t to camera τ). The mask is false
/// where the point falls behind the τ camera or outside its image.
pub fn reconstruct(
    g: &mut Graph,
    image_tau: NodeId,
    depth: NodeId,
    pose: PoseNodes,
    k: &CameraIntrinsics,
) -> Result<Reconstruction, GraphError> {
    let coords = g.reproject(k, depth, pose.rotation, pose.translation)?;
    let image = g.grid_sample(image_tau, coords)?;
    let front = g.reproject_mask(k, depth, pose.rotation, pose.translation)?;
    let inside = g.grid_sample_mask(image_tau, coords)?;
    let mask = g.mul(front, inside)?;
    Ok(Reconstruction { image, mask })
}

/// Masked mean of a per-pixel map: `Σ m·e / Σ m`, failing with
/// [`GraphError::EmptyMask`] when the mask is empty.
fn masked_mean(g: &mut Graph, e: NodeId, mask: NodeId, what: &str) -> Result<NodeId, GraphError> {
    let weighted = g.mul(e, mask)?;
    let num = g.sum(weighted);
    let den = g.sum(mask);
    let den = g.require_positive(den, what);
    g.div(num, den)
}

/// Shrinks a binary mask to the pixels whose whole 3×3 neighbourhood is
/// valid, so that SSIM windows never straddle invalid samples.
pub fn erode_mask(g: &mut Graph, mask: NodeId) -> Result<NodeId, GraphError> {
    let mean = g.box3x3(mask)?;
    let count = g.scale(mean, 9.0);
    let shifted = g.add_scalar(count, -8.0);
    Ok(g.clamp(shifted, 0.0, 1.0))
}

/// Photometric consistency: for each reconstruction, the mean of
/// `w_co · mean_c|I_t − Î| + w_st · mean_c(1 − SSIM)` over pixels whose
/// 3×3 neighbourhood is valid; summed over reconstructions.
pub fn photometric_loss(
    g: &mut Graph,
    image_t: NodeId,
    reconstructions: &[Reconstruction],
    weights: &LossWeights,
) -> Result<NodeId, GraphError> {
    let mut total: Option<NodeId> = None;
    for rec in reconstructions {
        let diff = g.sub(image_t, rec.image)?;
        let l1 = g.abs(diff);
        let l1 = g.mean_axes(l1, &[1])?;
        let ssim = g.ssim_3x3(image_t, rec.image)?;
        let dissim = g.neg(ssim);
        let dissim = g.add_scalar(dissim, 1.0);
        let dissim = g.clamp(dissim, 0.0, 2.0);
        let dissim = g.mean_axes(dissim, &[1])?;
        let a = g.scale(l1, weights.w_co);
        let b = g.scale(dissim, weights.w_st);
        let per_pixel = g.add(a, b)?;
        let mask = erode_mask(g, rec.mask)?;
        let term = masked_mean(g, per_pixel, mask, "photometric loss has no valid reprojection")?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| GraphError::ShapeMismatch("photometric loss needs at least one neighbour".into()))
}

/// Mean `|ẑ − z_s|` over the sparse support `mask` (1 on measured pixels).
pub fn sparse_depth_loss(g: &mut Graph, depth: NodeId, sparse: NodeId, mask: NodeId) -> Result<NodeId, GraphError> {
    let diff = g.sub(depth, sparse)?;
    let a = g.abs(diff);
    masked_mean(g, a, mask, "sparse depth is empty")
}

/// `‖log(g_fwd · g_bwd)‖²` averaged over the batch. With `rotation_only`
/// only the rotational part of the twist is penalized.
pub fn pose_consistency_loss(
    g: &mut Graph,
    forward: PoseNodes,
    backward: PoseNodes,
    rotation_only: bool,
) -> Result<NodeId, GraphError> {
    let batch = g.shape(forward.translation)[0];
    let composed = compose_poses(g, forward, backward)?;
    let omega = g.log_so3(composed.rotation)?;
    let w2 = g.square(omega);
    let mut sq = g.sum(w2);
    if !rotation_only {
        let u = g.left_jacobian_inv_apply(omega, composed.translation)?;
        let u2 = g.square(u);
        let su = g.sum(u2);
        sq = g.add(sq, su)?;
    }
    Ok(g.scale(sq, 1.0 / batch as f64))
}

/// Edge-aware smoothness: `Σ λ_X|∂_X ẑ| + Σ λ_Y|∂_Y ẑ|` over valid forward
/// differences, divided by the pixel count `B·H·W`, with
/// `λ = exp(−mean_c |∂I|)`.
pub fn smoothness_loss(g: &mut Graph, depth: NodeId, image: NodeId) -> Result<NodeId, GraphError> {
    let s = g.shape(depth).to_vec();
    let (h, w) = (s[2], s[3]);
    let n = (s[0] * h * w) as f64;
    let mut total = g.scalar_constant(0.0);
    for axis in [3usize, 2] {
        let len = s[axis];
        if len < 2 {
            continue;
        }
        let dz = forward_difference(g, depth, axis, len)?;
        let dz = g.abs(dz);
        let di = forward_difference(g, image, axis, len)?;
        let di = g.abs(di);
        let di = g.mean_axes(di, &[1])?;
        let di = g.neg(di);
        let lambda = g.exp(di);
        let weighted = g.mul(lambda, dz)?;
        let sum = g.sum(weighted);
        total = g.add(total, sum)?;
    }
    Ok(g.scale(total, 1.0 / n))
}

fn forward_difference(g: &mut Graph, x: NodeId, axis: usize, len: usize) -> Result<NodeId, GraphError> {
    let hi = g.slice(x, axis, 1, len)?;
    let lo = g.slice(x, axis, 0, len - 1)?;
    g.sub(hi, lo)
}

/// Graph handles describing one batch of training data.
#[derive(Debug, Clone)]
pub struct ObjectiveInputs {
    pub image_t: NodeId,
    /// Neighbour images with the relative pose from camera t to camera τ.
    pub neighbours: Vec<(NodeId, PoseNodes)>,
    /// Forward/backward pose pairs for the consistency term.
    pub pose_pairs: Vec<(PoseNodes, PoseNodes)>,
    pub depth: NodeId,
    pub sparse_depth: NodeId,
    pub sparse_mask: NodeId,
}

/// The individual terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub photometric: Option<NodeId>,
    pub sparse: Option<NodeId>,
    pub pose: Option<NodeId>,
    pub smoothness: Option<NodeId>,
    pub total: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveOptions {
    pub rotation_only_pose_consistency: bool,
}

/// Builds every term with a non-zero weight and their weighted sum.
pub fn total_loss(
    g: &mut Graph,
    inputs: &ObjectiveInputs,
    k: &CameraIntrinsics,
    weights: &LossWeights,
    options: ObjectiveOptions,
) -> Result<LossTerms, GraphError> {
    let mut total = g.scalar_constant(0.0);
    let accumulate = |g: &mut Graph, total: &mut NodeId, term: NodeId, w: f64| -> Result<(), GraphError> {
        let scaled = g.scale(term, w);
        *total = g.add(*total, scaled)?;
        Ok(())
    };

    let photometric = if weights.w_ph > 0.0 && !inputs.neighbours.is_empty() {
        let recs = inputs
            .neighbours
            .iter()
            .map(|&(img, pose)| reconstruct(g, img, inputs.depth, pose, k))
            .collect::<Result<Vec<_>, _>>()?;
        let t = photometric_loss(g, inputs.image_t, &recs, weights)?;
        accumulate(g, &mut total, t, weights.w_ph)?;
        Some(t)
    } else {
        None
    };
    let sparse = if weights.w_sz > 0.0 {
        let t = sparse_depth_loss(g, inputs.depth, inputs.sparse_depth, inputs.sparse_mask)?;
        accumulate(g, &mut total, t, weights.w_sz)?;
        Some(t)
    } else {
        None
    };
    let pose = if weights.w_pc > 0.0 && !inputs.pose_pairs.is_empty() {
        let mut sum: Option<NodeId> = None;
        for &(fwd, bwd) in &inputs.pose_pairs {
            let t = pose_consistency_loss(g, fwd, bwd, options.rotation_only_pose_consistency)?;
            sum = Some(match sum {
                Some(s) => g.add(s, t)?,
                None => t,
            });
        }
        let t = sum.expect("non-empty pose pairs");
        accumulate(g, &mut total, t, weights.w_pc)?;
        Some(t)
    } else {
        None
    };
    let smoothness = if weights.w_sm > 0.0 {
        let t = smoothness_loss(g, inputs.depth, inputs.image_t)?;
        accumulate(g, &mut total, t, weights.w_sm)?;
        Some(t)
    } else {
        None
    };
    Ok(LossTerms { photometric, sparse, pose, smoothness, total })
}

/// Dense `[1, 1, H, W]` sparse-depth values and support mask.
pub fn sparse_arrays(sparse: &SparseDepthMap) -> (Array, Array) {
    let (w, h) = (sparse.width(), sparse.height());
    let mut z = Array::zeros(&[1, 1, h, w]);
    let mut m = Array::zeros(&[1, 1, h, w]);
    for p in sparse.points() {
        z.data_mut()[p.v * w + p.u] = p.z;
        m.data_mut()[p.v * w + p.u] = 1.0;
    }
    (z, m)
}

/// Scalar values of the objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub photometric: f64,
    pub sparse: f64,
    pub pose: f64,
    pub smoothness: f64,
    pub total: f64,
}

/// Evaluates the objective on one triplet for a fixed depth map
/// (`[H, W]` row-major, meters) and fixed relative poses.
///
/// `pose_prev` maps camera t to camera t−1 and `pose_next` camera t to
/// t+1. `backward` optionally supplies the reverse motions for the
/// consistency term; terms without inputs evaluate to 0.
pub fn evaluate_triplet(
    triplet: &FrameTriplet,
    depth: &[f64],
    pose_prev: &Pose,
    pose_next: &Pose,
    backward: Option<(&Pose, &Pose)>,
    weights: &LossWeights,
) -> Result<LossValues, LossError> {
    triplet.validate()?;
    let (h, w) = (triplet.height(), triplet.width());
    if depth.len() != h * w {
        return Err(LossError::InvalidTriplet("depth size does not match images".into()));
    }
    let mut g = Graph::new();
    let img = |a: &Array| a.clone().reshaped(&[1, 3, h, w]);
    let image_t = g.constant(img(&triplet.image_curr)?);
    let image_prev = g.constant(img(&triplet.image_prev)?);
    let image_next = g.constant(img(&triplet.image_next)?);
    let depth = g.constant(Array::from_vec(&[1, 1, h, w], depth.to_vec())?);
    let (zs, mask) = sparse_arrays(&triplet.sparse);
    let sparse_depth = g.constant(zs);
    let sparse_mask = g.constant(mask);
    let fwd_prev = PoseNodes::constant(&mut g, std::slice::from_ref(pose_prev));
    let fwd_next = PoseNodes::constant(&mut g, std::slice::from_ref(pose_next));
    let pose_pairs = match backward {
        Some((bp, bn)) => {
            let bp = PoseNodes::constant(&mut g, std::slice::from_ref(bp));
            let bn = PoseNodes::constant(&mut g, std::slice::from_ref(bn));
            vec![(fwd_prev, bp), (fwd_next, bn)]
        }
        None => Vec::new(),
    };
    let inputs = ObjectiveInputs {
        image_t,
        neighbours: vec![(image_prev, fwd_prev), (image_next, fwd_next)],
        pose_pairs,
        depth,
        sparse_depth,
        sparse_mask,
    };
    let terms = total_loss(&mut g, &inputs, &triplet.intrinsics, weights, ObjectiveOptions::default())?;
    let outputs: Vec<NodeId> = [terms.photometric, terms.sparse, terms.pose, terms.smoothness]
        .into_iter()
        .flatten()
        .chain([terms.total])
        .collect();
    g.forward(&outputs)?;
    let get = |g: &Graph, n: Option<NodeId>| -> Result<f64, GraphError> {
        n.map_or(Ok(0.0), |id| g.value(id).map(Array::item))
    };
    Ok(LossValues {
        photometric: get(&g, terms.photometric)?,
        sparse: get(&g, terms.sparse)?,
        pose: get(&g, terms.pose)?,
        smoothness: get(&g, terms.smoothness)?,
        total: g.value(terms.total)?.item(),
    })
}
