//! Shared fixtures: randomized catalogs of differentiable ops and objective
//! terms for gradient checking.

#![allow(dead_code)]

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdc::diffgraph::gradcheck::{check_gradients, GradCheckReport};
use sdc::diffgraph::{Array, Graph, GraphError, NodeId};
use sdc::geometry::CameraIntrinsics;
use sdc::losses::{
    photometric_loss, pose_consistency_loss, reconstruct, smoothness_loss, sparse_depth_loss, total_loss, LossWeights,
    ObjectiveInputs, ObjectiveOptions, PoseNodes,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    Array::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform values with magnitude in `[0.1, 1)` and random sign; keeps kinks
/// of abs / leaky_relu away from the probe points.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    Array::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Scalar loss `sum(x ⊙ r)` with a random fixed weighting `r`.
pub fn weighted_sum(g: &mut Graph, x: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
    let shape = g.shape(x).to_vec();
    let r = g.constant(uniform(rng, &shape, -1.0, 1.0));
    let p = g.mul(x, r).unwrap();
    g.sum(p)
}

pub struct OpCase {
    pub graph: Graph,
    pub loss: NodeId,
    pub wrt: Vec<NodeId>,
}

type Builder = fn(&mut ChaCha8Rng) -> Result<OpCase, GraphError>;

fn unary_case(rng: &mut ChaCha8Rng, x: Array, f: impl Fn(&mut Graph, NodeId) -> NodeId) -> Result<OpCase, GraphError> {
    let mut g = Graph::new();
    let xi = g.param("x", x);
    let y = f(&mut g, xi);
    let loss = weighted_sum(&mut g, y, rng);
    Ok(OpCase { graph: g, loss, wrt: vec![xi] })
}

fn image_shape(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [rng.random_range(1..3), rng.random_range(1..4), 8, 8]
}

fn small_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.random_range(1..4);
    (0..rank).map(|_| rng.random_range(1..5)).collect()
}

fn binary_case(rng: &mut ChaCha8Rng, kind: u8) -> Result<OpCase, GraphError> {
    let a_shape = [rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..5)];
    // b broadcasts along a random subset of axes
    let b_shape: Vec<usize> = a_shape.iter().map(|&d| if rng.random::<bool>() { 1 } else { d }).collect();
    let mut g = Graph::new();
    let a = g.param("a", uniform(rng, &a_shape, -1.0, 1.0));
    let b = g.param("b", uniform(rng, &b_shape, 0.5, 2.0));
    let y = match kind {
        0 => g.add(a, b)?,
        1 => g.sub(a, b)?,
        2 => g.mul(a, b)?,
        _ => g.div(a, b)?,
    };
    let loss = weighted_sum(&mut g, y, rng);
    Ok(OpCase { graph: g, loss, wrt: vec![a, b] })
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Array {
    let axis = uniform(rng, &[3], -1.0, 1.0);
    let n = axis.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let angle = rng.random_range(0.05..max_angle);
    let w = sdc::geometry::Vec3::new(axis.data()[0], axis.data()[1], axis.data()[2]) * (angle / n);
    let r = sdc::geometry::exp_so3(&sdc::geometry::AxisAngle(w)).0;
    Array::from_fn(&[1, 3, 3], |i| r[(i / 3, i % 3)])
}

/// Moves every coordinate at least `margin` away from the nearest integer.
fn off_integer(a: Array, margin: f64) -> Array {
    a.map(|v| {
        let f = v - v.round();
        if f.abs() < margin {
            v.round() + if f >= 0.0 { margin } else { -margin }
        } else {
            v
        }
    })
}

pub fn intrinsics_8x8() -> CameraIntrinsics {
    CameraIntrinsics::new(6.0, 6.5, 3.6, 3.4, 8, 8).unwrap()
}

/// Every differentiable graph op with a randomized instance per seed.
pub fn op_catalog() -> Vec<(&'static str, Builder)> {
    vec![
        ("add", |r| binary_case(r, 0)),
        ("sub", |r| binary_case(r, 1)),
        ("mul", |r| binary_case(r, 2)),
        ("div", |r| binary_case(r, 3)),
        ("neg", |r| {
            let s = small_shape(r);
            let x = uniform(r, &s, -1.0, 1.0);
            unary_case(r, x, |g, x| g.neg(x))
        }),
        ("scale", |r| {
            let s = small_shape(r);
            let x = uniform(r, &s, -1.0, 1.0);
            unary_case(r, x, |g, x| g.scale(x, -2.5))
        }),
        ("add_scalar", |r| {
            let s = small_shape(r);
            let x = uniform(r, &s, -1.0, 1.0);
            unary_case(r, x, |g, x| g.add_scalar(x, 0.75))
        }),
        ("abs", |r| {
            let s = small_shape(r);
            let x = away_from_zero(r, &s);
            unary_case(r, x, |g, x| g.abs(x))
        }),
        ("exp", |r| {
            let s = small_shape(r);
            let x = uniform(r, &s, -2.0, 2.0);
            unary_case(r, x, |g, x| g.exp(x))
        }),
        ("log", |r| {
            let s = small_shape(r);
            let x = uniform(r, &s, 0.2, 3.0);
            unary_case(r, x, |g, x| g.log(x))
        }),
        ("sqrt", |r| {
            let s = small_shape(r);
            let x = uniform(r, &s, 0.2, 3.0);
            unary_case(r, x, |g, x| g.sqrt(x))
        }),
        ("square", |r| {
            let s = small_shape(r);
            let x = uniform(r, &s, -2.0, 2.0);
            unary_case(r, x, |g, x| g.square(x))
        }),
        ("leaky_relu", |r| {
            let s = small_shape(r);
            let x = away_from_zero(r, &s);
            unary_case(r, x, |g, x| g.leaky_relu(x, 0.1))
        }),
        ("softplus", |r| {
            let s = small_shape(r);
            let x = uniform(r, &s, -4.0, 4.0);
            unary_case(r, x, |g, x| g.softplus(x))
        }),
        ("clamp", |r| {
            let s = small_shape(r);
            // bounds at ±0.5, samples kept 0.05 away from them
            let x = Array::from_fn(&s, |_| {
                let v: f64 = r.random_range(-1.0..1.0);
                if (v.abs() - 0.5).abs() < 0.05 {
                    v * 1.3
                } else {
                    v
                }
            });
            unary_case(r, x, |g, x| g.clamp(x, -0.5, 0.5))
        }),
        ("sum", |r| {
            let s = small_shape(r);
            let x = uniform(r, &s, -1.0, 1.0);
            let mut g = Graph::new();
            let xi = g.param("x", x);
            let y = g.sum(xi);
            let loss = g.square(y);
            Ok(OpCase { graph: g, loss, wrt: vec![xi] })
        }),
        ("mean", |r| {
            let s = small_shape(r);
            let x = uniform(r, &s, -1.0, 1.0);
            let mut g = Graph::new();
            let xi = g.param("x", x);
            let y = g.mean(xi);
            let loss = g.square(y);
            Ok(OpCase { graph: g, loss, wrt: vec![xi] })
        }),
        ("sum_axes", |r| {
            let s = image_shape(r);
            let x = uniform(r, &s, -1.0, 1.0);
            let axes: Vec<usize> = (0..4).filter(|_| r.random::<bool>()).collect();
            unary_case(r, x, move |g, x| g.sum_axes(x, &axes).unwrap())
        }),
        ("mean_axes", |r| {
            let s = image_shape(r);
            let x = uniform(r, &s, -1.0, 1.0);
            let axes: Vec<usize> = (0..4).filter(|_| r.random::<bool>()).collect();
            unary_case(r, x, move |g, x| g.mean_axes(x, &axes).unwrap())
        }),
        ("spatial_mean", |r| {
            let s = image_shape(r);
            let x = uniform(r, &s, -1.0, 1.0);
            unary_case(r, x, |g, x| g.spatial_mean(x).unwrap())
        }),
        ("reshape", |r| {
            let s = image_shape(r);
            let x = uniform(r, &s, -1.0, 1.0);
            let n = s.iter().product::<usize>();
            unary_case(r, x, move |g, x| g.reshape(x, &[n / 8, 8]).unwrap())
        }),
        ("slice", |r| {
            let s = image_shape(r);
            let x = uniform(r, &s, -1.0, 1.0);
            let axis = r.random_range(0..4);
            let start = r.random_range(0..s[axis]);
            let end = r.random_range(start + 1..=s[axis]);
            unary_case(r, x, move |g, x| g.slice(x, axis, start, end).unwrap())
        }),
        ("concat", |r| {
            let s = image_shape(r);
            let mut s2 = s;
            s2[1] = r.random_range(1..4);
            let mut g = Graph::new();
            let a = g.param("a", uniform(r, &s, -1.0, 1.0));
            let b = g.param("b", uniform(r, &s2, -1.0, 1.0));
            let y = g.concat(&[a, b, a], 1)?;
            let loss = weighted_sum(&mut g, y, r);
            Ok(OpCase { graph: g, loss, wrt: vec![a, b] })
        }),
        ("transpose_last", |r| {
            let s = [r.random_range(1..3), r.random_range(1..5), r.random_range(1..5)];
            let x = uniform(r, &s, -1.0, 1.0);
            unary_case(r, x, |g, x| g.transpose_last(x).unwrap())
        }),
        ("matmul", |r| {
            let (b, m, k, n) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
            let mut g = Graph::new();
            let x = g.param("a", uniform(r, &[b, m, k], -1.0, 1.0));
            let y = g.param("b", uniform(r, &[b, k, n], -1.0, 1.0));
            let z = g.matmul(x, y)?;
            let loss = weighted_sum(&mut g, z, r);
            Ok(OpCase { graph: g, loss, wrt: vec![x, y] })
        }),
        ("conv2d", |r| {
            let s = image_shape(r);
            let k = [1, 3, 5][r.random_range(0..3)];
            let stride = r.random_range(1..3);
            let o = r.random_range(1..4);
            let mut g = Graph::new();
            let x = g.param("x", uniform(r, &s, -1.0, 1.0));
            let w = g.param("w", uniform(r, &[o, s[1], k, k], -1.0, 1.0));
            let b = g.param("b", uniform(r, &[o], -1.0, 1.0));
            let y = g.conv2d(x, w, b, stride)?;
            let loss = weighted_sum(&mut g, y, r);
            Ok(OpCase { graph: g, loss, wrt: vec![x, w, b] })
        }),
        ("conv_transpose2d", |r| {
            let mut s = image_shape(r);
            s[2] = 4;
            s[3] = 4;
            let k = [1, 3, 5][r.random_range(0..3)];
            let stride = r.random_range(1..3);
            let o = r.random_range(1..4);
            let mut g = Graph::new();
            let x = g.param("x", uniform(r, &s, -1.0, 1.0));
            let w = g.param("w", uniform(r, &[s[1], o, k, k], -1.0, 1.0));
            let b = g.param("b", uniform(r, &[o], -1.0, 1.0));
            let y = g.conv_transpose2d(x, w, b, stride)?;
            let loss = weighted_sum(&mut g, y, r);
            Ok(OpCase { graph: g, loss, wrt: vec![x, w, b] })
        }),
        ("upsample2x", |r| {
            let mut s = image_shape(r);
            s[2] = 4;
            s[3] = 4;
            let x = uniform(r, &s, -1.0, 1.0);
            unary_case(r, x, |g, x| g.upsample2x(x).unwrap())
        }),
        ("box3x3", |r| {
            let s = image_shape(r);
            let x = uniform(r, &s, -1.0, 1.0);
            unary_case(r, x, |g, x| g.box3x3(x).unwrap())
        }),
        ("exp_so3", |r| {
            let b = r.random_range(1..4);
            // mix of regular and near-zero rotation vectors
            let x = Array::from_fn(&[b, 3], |i| {
                if (i / 3) % 2 == 1 {
                    r.random_range(-1e-8..1e-8)
                } else {
                    r.random_range(-1.5..1.5)
                }
            });
            unary_case(r, x, |g, x| g.exp_so3(x).unwrap())
        }),
        ("log_so3", |r| {
            let rot = random_rotation(r, 3.0);
            unary_case(r, rot, |g, x| g.log_so3(x).unwrap())
        }),
        ("euler_to_rotation", |r| {
            let b = r.random_range(1..4);
            let x = uniform(r, &[b, 3], -1.5, 1.5);
            unary_case(r, x, |g, x| g.euler_to_rotation(x).unwrap())
        }),
        ("left_jacobian_inv_apply", |r| {
            let b = r.random_range(1..4);
            let mut g = Graph::new();
            let scale = [1e-3, 0.15, 1.0][r.random_range(0..3)];
            let w = g.param("w", uniform(r, &[b, 3], -scale, scale));
            let t = g.param("t", uniform(r, &[b, 3], -1.0, 1.0));
            let y = g.left_jacobian_inv_apply(w, t)?;
            let loss = weighted_sum(&mut g, y, r);
            Ok(OpCase { graph: g, loss, wrt: vec![w, t] })
        }),
        ("reproject", |r| {
            let k = intrinsics_8x8();
            let mut g = Graph::new();
            let d = g.param("depth", uniform(r, &[1, 1, 8, 8], 1.0, 3.0));
            let rot = g.param("r", random_rotation(r, 0.2));
            let t = g.param("t", uniform(r, &[1, 3], -0.2, 0.2));
            let y = g.reproject(&k, d, rot, t)?;
            let loss = weighted_sum(&mut g, y, r);
            Ok(OpCase { graph: g, loss, wrt: vec![d, rot, t] })
        }),
        ("grid_sample", |r| {
            let s = image_shape(r);
            let mut g = Graph::new();
            let img = g.param("image", uniform(r, &s, 0.0, 1.0));
            let coords = off_integer(uniform(r, &[s[0], 8, 8, 2], -1.5, 8.5), 1e-3);
            let c = g.param("coords", coords);
            let y = g.grid_sample(img, c)?;
            let loss = weighted_sum(&mut g, y, r);
            Ok(OpCase { graph: g, loss, wrt: vec![img, c] })
        }),
        ("ssim_3x3", |r| {
            let s = image_shape(r);
            let mut g = Graph::new();
            let a = g.param("a", uniform(r, &s, 0.0, 1.0));
            let b = g.param("b", uniform(r, &s, 0.0, 1.0));
            let y = g.ssim_3x3(a, b)?;
            let loss = weighted_sum(&mut g, y, r);
            Ok(OpCase { graph: g, loss, wrt: vec![a, b] })
        }),
        ("require_positive", |r| {
            let s = small_shape(r);
            let x = uniform(r, &s, 0.5, 1.0);
            unary_case(r, x, |g, x| g.require_positive(x, "test"))
        }),
    ]
}

/// Runs the gradient check of one catalog entry for one seed.
pub fn check_op(builder: Builder, seed: u64, max_coords: usize) -> GradCheckReport {
    let mut r = rng(seed);
    let mut case = builder(&mut r).expect("catalog case builds");
    check_gradients(&mut case.graph, case.loss, &case.wrt, max_coords).expect("gradient check runs")
}

/// Pose parameters `(ω, t)` as graph leaves and the node pair they drive.
fn pose_leaves(g: &mut Graph, name: &str, w: Array, t: Array) -> (Vec<NodeId>, PoseNodes) {
    let w = g.param(&format!("{name}_w"), w);
    let t = g.param(&format!("{name}_t"), t);
    let rotation = g.exp_so3(w).unwrap();
    (vec![w, t], PoseNodes { rotation, translation: t })
}

fn pose_params(g: &mut Graph, rng: &mut ChaCha8Rng, name: &str, rot: f64, trans: f64) -> (Vec<NodeId>, PoseNodes) {
    let w = uniform(rng, &[1, 3], -rot, rot);
    let t = uniform(rng, &[1, 3], -trans, trans);
    pose_leaves(g, name, w, t)
}

/// True when every pixel of `depth` reprojects at least `margin` pixels away
/// from integer coordinates, where bilinear sampling has kinks and the
/// validity mask switches.
fn reprojection_is_smooth(k: &CameraIntrinsics, depth: &Array, w: &Array, t: &Array, margin: f64) -> bool {
    use sdc::geometry::{exp_so3, AxisAngle, Vec3};
    let r = exp_so3(&AxisAngle(Vec3::new(w.data()[0], w.data()[1], w.data()[2]))).0;
    let tv = Vec3::new(t.data()[0], t.data()[1], t.data()[2]);
    (0..k.height * k.width).all(|i| {
        let (u, v) = ((i % k.width) as f64, (i / k.width) as f64);
        let ray = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let p = r * ray * depth.data()[i] + tv;
        let (x, y) = (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
        [x, y].iter().all(|c| (c - c.round()).abs() > margin)
    })
}

/// Depth and small camera motions whose reprojections are all smooth.
fn smooth_warps(rng: &mut ChaCha8Rng, k: &CameraIntrinsics, n: usize) -> (Array, Vec<(Array, Array)>) {
    loop {
        let depth = uniform_clear(rng, &[1, 1, k.height, k.width], 1.5, 3.0);
        let poses: Vec<_> =
            (0..n).map(|_| (uniform(rng, &[1, 3], -0.05, 0.05), uniform(rng, &[1, 3], -0.1, 0.1))).collect();
        if poses.iter().all(|(w, t)| reprojection_is_smooth(k, &depth, w, t, 1e-3)) {
            return (depth, poses);
        }
    }
}

/// True when every forward difference of `a: [B, C, H, W]` along both
/// spatial axes has magnitude above `margin`, keeping `|∂|` off its kink.
fn differences_clear(a: &Array, margin: f64) -> bool {
    let s = a.shape();
    let (h, w) = (s[2], s[3]);
    let d = a.data();
    (0..d.len()).all(|i| {
        let (y, x) = ((i / w) % h, i % w);
        (x + 1 == w || (d[i + 1] - d[i]).abs() > margin) && (y + 1 == h || (d[i + w] - d[i]).abs() > margin)
    })
}

/// Uniform samples redrawn until their spatial differences are kink free.
fn uniform_clear(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    loop {
        let a = uniform(rng, shape, lo, hi);
        if differences_clear(&a, 1e-3) {
            return a;
        }
    }
}

fn sparse_case(g: &mut Graph, rng: &mut ChaCha8Rng) -> (NodeId, NodeId) {
    let z = g.constant(uniform(rng, &[1, 1, 8, 8], 1.0, 3.0));
    let m = g.constant(Array::from_fn(&[1, 1, 8, 8], |i| if i % 3 == 0 { 1.0 } else { 0.0 }));
    (z, m)
}

/// The objective terms on 8×8 inputs with every input as a graph leaf.
pub fn loss_catalog() -> Vec<(&'static str, Builder)> {
    vec![
        ("photometric", |r| {
            let k = intrinsics_8x8();
            let mut g = Graph::new();
            // disjoint ranges keep |I_t − Î| away from its kink
            let it = g.param("image_t", uniform(r, &[1, 3, 8, 8], 0.0, 0.4));
            let itau = g.param("image_tau", uniform(r, &[1, 3, 8, 8], 0.6, 1.0));
            let (depth, mut warps) = smooth_warps(r, &k, 1);
            let d = g.param("depth", depth);
            let (w, t) = warps.remove(0);
            let (mut wrt, pose) = pose_leaves(&mut g, "pose", w, t);
            let rec = reconstruct(&mut g, itau, d, pose, &k)?;
            let loss = photometric_loss(&mut g, it, &[rec], &LossWeights::kitti())?;
            wrt.extend([it, itau, d]);
            Ok(OpCase { graph: g, loss, wrt })
        }),
        ("sparse_depth", |r| {
            let mut g = Graph::new();
            let d = g.param("depth", uniform(r, &[1, 1, 8, 8], 0.5, 3.5));
            let (z, m) = sparse_case(&mut g, r);
            let loss = sparse_depth_loss(&mut g, d, z, m)?;
            Ok(OpCase { graph: g, loss, wrt: vec![d] })
        }),
        ("pose_consistency", |r| {
            let mut g = Graph::new();
            let (mut wrt, fwd) = pose_params(&mut g, r, "fwd", 0.5, 0.5);
            let (b, bwd) = pose_params(&mut g, r, "bwd", 0.5, 0.5);
            wrt.extend(b);
            let loss = pose_consistency_loss(&mut g, fwd, bwd, false)?;
            Ok(OpCase { graph: g, loss, wrt })
        }),
        ("pose_consistency_rotation_only", |r| {
            let mut g = Graph::new();
            let (mut wrt, fwd) = pose_params(&mut g, r, "fwd", 0.5, 0.5);
            let (b, bwd) = pose_params(&mut g, r, "bwd", 0.5, 0.5);
            wrt.extend(b);
            let loss = pose_consistency_loss(&mut g, fwd, bwd, true)?;
            Ok(OpCase { graph: g, loss, wrt })
        }),
        ("smoothness", |r| {
            let mut g = Graph::new();
            let d = g.param("depth", uniform_clear(r, &[1, 1, 8, 8], 0.5, 3.5));
            let i = g.param("image", uniform_clear(r, &[1, 3, 8, 8], 0.0, 1.0));
            let loss = smoothness_loss(&mut g, d, i)?;
            Ok(OpCase { graph: g, loss, wrt: vec![d, i] })
        }),
        ("total", |r| {
            let k = intrinsics_8x8();
            let mut g = Graph::new();
            let image_t = g.param("image_t", uniform_clear(r, &[1, 3, 8, 8], 0.0, 0.4));
            let prev = g.param("image_prev", uniform(r, &[1, 3, 8, 8], 0.6, 1.0));
            let next = g.param("image_next", uniform(r, &[1, 3, 8, 8], 0.6, 1.0));
            let (depth, mut warps) = smooth_warps(r, &k, 2);
            let depth = g.param("depth", depth);
            let (w, t) = warps.remove(0);
            let (mut wrt, fp) = pose_leaves(&mut g, "fwd_prev", w, t);
            let (w, t) = warps.remove(0);
            let (w, fnx) = pose_leaves(&mut g, "fwd_next", w, t);
            wrt.extend(w);
            let (w, bp) = pose_params(&mut g, r, "bwd_prev", 0.05, 0.1);
            wrt.extend(w);
            let (w, bn) = pose_params(&mut g, r, "bwd_next", 0.05, 0.1);
            wrt.extend(w);
            let (sparse_depth, sparse_mask) = sparse_case(&mut g, r);
            let inputs = ObjectiveInputs {
                image_t,
                neighbours: vec![(prev, fp), (next, fnx)],
                pose_pairs: vec![(fp, bp), (fnx, bn)],
                depth,
                sparse_depth,
                sparse_mask,
            };
            let terms = total_loss(&mut g, &inputs, &k, &LossWeights::kitti(), ObjectiveOptions::default())?;
            wrt.extend([image_t, prev, next, depth]);
            Ok(OpCase { graph: g, loss: terms.total, wrt })
        }),
    ]
}
