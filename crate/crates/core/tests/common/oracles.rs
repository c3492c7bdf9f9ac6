//! Brute-force reference implementations: 4×4 homogeneous matrices for
//! trajectories, plain loops for depth errors, determinants for geometry.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdc::geometry::{exp_se3, Pose, Twist, Vec3};
use sdc::metrics::{chain, Trajectory};
use sdc::scaffold::DenseDepthMap;

pub fn h(p: &Pose) -> Matrix4<f64> {
    p.to_homogeneous()
}

pub fn trans(m: &Matrix4<f64>) -> Vector3<f64> {
    Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)])
}

pub fn inv(m: &Matrix4<f64>) -> Matrix4<f64> {
    m.try_inverse().unwrap()
}

/// Rotation angle from the trace; accurate away from 0 and π.
pub fn angle(m: &Matrix4<f64>) -> f64 {
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    s.atan2(c)
}

pub fn ate(est: &[Pose], gt: &[Pose]) -> f64 {
    let anchor = h(&gt[0]) * inv(&h(&est[0]));
    let mut sum = 0.0;
    for t in 0..est.len() {
        sum += trans(&(inv(&h(&gt[t])) * anchor * h(&est[t]))).norm_squared();
    }
    (sum / est.len() as f64).sqrt()
}

pub fn ate5f(est: &[Pose], gt: &[Pose]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for s in 0..=est.len() - 5 {
        let a = ate(&est[s..s + 5], &gt[s..s + 5]);
        sum += a * a;
        n += 1;
    }
    (sum / n as f64).sqrt()
}

pub fn rpe(est: &[Pose], gt: &[Pose]) -> f64 {
    let mut sum = 0.0;
    for t in 0..est.len() - 1 {
        let g = inv(&h(&gt[t])) * h(&gt[t + 1]);
        let e = inv(&h(&est[t])) * h(&est[t + 1]);
        sum += trans(&(inv(&g) * e)).norm_squared();
    }
    (sum / (est.len() - 1) as f64).sqrt()
}

pub fn rre(est: &[Pose], gt: &[Pose]) -> f64 {
    let mut sum = 0.0;
    for t in 0..est.len() - 1 {
        let g = inv(&h(&gt[t])) * h(&gt[t + 1]);
        let e = inv(&h(&est[t])) * h(&est[t + 1]);
        sum += angle(&(inv(&g) * e)).powi(2);
    }
    (sum / (est.len() - 1) as f64).sqrt()
}

/// MAE, RMSE (mm) and iMAE, iRMSE (1/km) over pixels with positive ground
/// truth, with the pixel count.
pub fn depth_errors(pred: &DenseDepthMap, gt: &DenseDepthMap) -> ([f64; 4], usize) {
    let (mut a, mut s, mut ia, mut is, mut c) = (0.0, 0.0, 0.0, 0.0, 0);
    for i in 0..gt.depth.len() {
        if gt.depth[i] > 0.0 {
            let e = (pred.depth[i] - gt.depth[i]) * 1000.0;
            let ie = 1.0 / (pred.depth[i] / 1000.0) - 1.0 / (gt.depth[i] / 1000.0);
            a += e.abs();
            s += e * e;
            ia += ie.abs();
            is += ie * ie;
            c += 1;
        }
    }
    let n = c as f64;
    ([a / n, (s / n).sqrt(), ia / n, (is / n).sqrt()], c)
}

pub fn random_pose(r: &mut ChaCha8Rng, rot: f64, trans: f64) -> Pose {
    let mut v = |s: f64| Vec3::new(r.random_range(-s..s), r.random_range(-s..s), r.random_range(-s..s));
    let w = v(rot);
    let t = v(trans);
    exp_se3(&Twist::new(w, t))
}

/// Ground truth and a noisy estimate with bounded relative rotation error.
pub fn trajectories(seed: u64, n: usize) -> (Trajectory, Trajectory) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let gt_rel: Vec<Pose> = (0..n - 1).map(|_| random_pose(&mut r, 0.3, 1.0)).collect();
    let est_rel: Vec<Pose> = gt_rel.iter().map(|g| g.compose(&random_pose(&mut r, 0.2, 0.2))).collect();
    let start = random_pose(&mut r, 2.0, 5.0);
    let mut gt = chain(&gt_rel);
    gt.poses.iter_mut().for_each(|p| *p = start.compose(p));
    (chain(&est_rel), gt)
}

/// Random depth maps on one row; about 30% of the ground truth is missing.
pub fn random_maps(seed: u64, n: usize) -> (DenseDepthMap, DenseDepthMap) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let gt: Vec<f64> = (0..n).map(|_| if r.random::<f64>() < 0.3 { 0.0 } else { r.random_range(0.5..80.0) }).collect();
    let pred: Vec<f64> = (0..n).map(|_| r.random_range(0.1..90.0)).collect();
    (DenseDepthMap::from_depth(n, 1, pred), DenseDepthMap::from_depth(n, 1, gt))
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Positive when `d` lies inside the circumcircle of counterclockwise
/// `a, b, c`.
pub fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let row = |p: [f64; 2]| {
        let (x, y) = (p[0] - d[0], p[1] - d[1]);
        [x, y, x * x + y * y]
    };
    let (r0, r1, r2) = (row(a), row(b), row(c));
    r0[0] * (r1[1] * r2[2] - r1[2] * r2[1]) - r0[1] * (r1[0] * r2[2] - r1[2] * r2[0])
        + r0[2] * (r1[0] * r2[1] - r1[1] * r2[0])
}

pub fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Convex hull found by testing every ordered pair of distinct points as
/// a supporting line.
pub struct BruteHull {
    pub points: Vec<[f64; 2]>,
    /// Distinct points lying on the hull boundary, including edge interiors.
    pub boundary: usize,
    /// Counterclockwise edges between extreme points.
    pub edges: Vec<([f64; 2], [f64; 2])>,
}

impl BruteHull {
    pub fn new(input: &[[f64; 2]]) -> Self {
        let mut p: Vec<[f64; 2]> = Vec::new();
        for q in input {
            if !p.contains(q) {
                p.push(*q);
            }
        }
        let n = p.len();
        let mut on_hull = vec![false; n];
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j || !(0..n).all(|k| orient(p[i], p[j], p[k]) >= 0.0) {
                    continue;
                }
                let line: Vec<usize> = (0..n).filter(|&k| orient(p[i], p[j], p[k]) == 0.0).collect();
                line.iter().for_each(|&k| on_hull[k] = true);
                // keep the longest segment of each supporting line
                if line.iter().all(|&k| between(p[i], p[j], p[k])) {
                    edges.push((p[i], p[j]));
                }
            }
        }
        let boundary = on_hull.iter().filter(|&&b| b).count();
        Self { points: p, boundary, edges }
    }

    pub fn area(&self) -> f64 {
        let o = self.points[0];
        0.5 * self.edges.iter().map(|&(a, b)| orient(o, a, b)).sum::<f64>()
    }

    pub fn contains(&self, q: [f64; 2]) -> bool {
        self.edges.iter().all(|&(a, b)| orient(a, b, q) >= 0.0)
    }
}

fn between(a: [f64; 2], b: [f64; 2], k: [f64; 2]) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    let t = ((k[0] - a[0]) * d[0] + (k[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1]);
    (0.0..=1.0).contains(&t)
}

/// Checks a triangulation of `points` against the brute-force hull and the
/// empty-circumcircle test over every (triangle, point) pair. Returns the
/// number of circumcircle violations, or a description of a structural
/// defect.
pub fn delaunay_violations(points: &[[f64; 2]], tris: &[[usize; 3]], tol: f64) -> Result<usize, String> {
    let hull = BruteHull::new(points);
    let n = hull.points.len();
    let want = 2 * n - 2 - hull.boundary;
    if tris.len() != want {
        return Err(format!("{} triangles, expected {want} for {n} points", tris.len()));
    }
    let mut area = 0.0;
    let mut violations = 0;
    for t in tris {
        let [a, b, c] = t.map(|i| points[i]);
        let o = orient(a, b, c);
        if o <= 0.0 {
            return Err(format!("triangle {t:?} is not counterclockwise"));
        }
        area += 0.5 * o;
        violations += hull.points.iter().filter(|&&d| incircle(a, b, c, d) > tol).count();
    }
    let hull_area = hull.area();
    if (area - hull_area).abs() > 1e-9 * hull_area.max(1.0) {
        return Err(format!("triangles cover {area}, hull area {hull_area}"));
    }
    Ok(violations)
}

/// Uniformly random axis with angle uniform in `[lo, hi)`.
pub fn axis_angle(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec3 {
    let axis = loop {
        let v = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    axis * r.random_range(lo..hi)
}

/// `exp` of the 4×4 twist matrix by nalgebra's general matrix exponential.
pub fn se3_matrix_exp(w: &Vec3, v: &Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&sdc::geometry::hat(w));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(v);
    m.exp()
}
