//! View synthesis kernels: rigid reprojection of a depth map into a second
//! camera and bilinear sampling of an image at the resulting coordinates.

use super::Array;
use crate::geometry::{CameraIntrinsics, Mat3, Vec3};

/// Smallest depth in the target camera that counts as visible.
pub const MIN_REPROJECTED_DEPTH: f64 = 1e-3;

/// Sampling coordinate assigned to pixels that do not reproject; lies
/// outside every image so sampling yields 0 and an invalid mask.
const INVALID_COORD: f64 = -2.0;

/// Slack on the in-image test so that rounding in an identity warp does
/// not reject border pixels.
const BOUNDS_TOLERANCE: f64 = 1e-9;

fn rt_at(r: &Array, t: &Array, i: usize) -> (Mat3, Vec3) {
    let m = Mat3::from_row_slice(&r.data()[9 * i..9 * i + 9]);
    let d = &t.data()[3 * i..3 * i + 3];
    (m, Vec3::new(d[0], d[1], d[2]))
}

fn ray(k: &CameraIntrinsics, u: usize, v: usize) -> Vec3 {
    Vec3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0)
}

/// Visits every pixel of `depth: [B, 1, H, W]` with its transformed point.
fn for_each_point(
    k: &CameraIntrinsics,
    depth: &Array,
    r: &Array,
    t: &Array,
    mut f: impl FnMut(usize, usize, Vec3, Vec3, &Mat3),
) {
    let (b, h, w) = (depth.shape()[0], depth.shape()[2], depth.shape()[3]);
    for i in 0..b {
        let (rm, tv) = rt_at(r, t, i);
        for v in 0..h {
            for u in 0..w {
                let idx = (i * h + v) * w + u;
                let q = ray(k, u, v) * depth.data()[idx];
                f(i, idx, q, rm * q + tv, &rm);
            }
        }
    }
}

/// Pixel coordinates `[B, H, W, 2]` (u, v) where each pixel of `depth`
/// lands after the rigid motion `(R, t)`.
pub(crate) fn reproject_forward(k: &CameraIntrinsics, depth: &Array, r: &Array, t: &Array) -> Array {
    let (b, h, w) = (depth.shape()[0], depth.shape()[2], depth.shape()[3]);
    let mut out = Array::zeros(&[b, h, w, 2]);
    let data = out.data_mut();
    for_each_point(k, depth, r, t, |_, idx, _, p, _| {
        let (u, v) = if p.z > MIN_REPROJECTED_DEPTH {
            (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
        } else {
            (INVALID_COORD, INVALID_COORD)
        };
        data[2 * idx] = u;
        data[2 * idx + 1] = v;
    });
    out
}

/// 1 where the transformed point is in front of the target camera.
pub(crate) fn reproject_mask(k: &CameraIntrinsics, depth: &Array, r: &Array, t: &Array) -> Array {
    let mut out = Array::zeros(depth.shape());
    let data = out.data_mut();
    for_each_point(k, depth, r, t, |_, idx, _, p, _| {
        data[idx] = if p.z > MIN_REPROJECTED_DEPTH { 1.0 } else { 0.0 };
    });
    out
}

pub(crate) fn reproject_backward(
    k: &CameraIntrinsics,
    depth: &Array,
    r: &Array,
    t: &Array,
    g: &Array,
    needs: &[bool],
) -> Vec<Option<Array>> {
    let mut gd = Array::zeros(depth.shape());
    let mut gr = Array::zeros(r.shape());
    let mut gt = Array::zeros(t.shape());
    let (h, w) = (depth.shape()[2], depth.shape()[3]);
    for_each_point(k, depth, r, t, |i, idx, q, p, rm| {
        if p.z <= MIN_REPROJECTED_DEPTH {
            return;
        }
        let (gu, gv) = (g.data()[2 * idx], g.data()[2 * idx + 1]);
        let iz = 1.0 / p.z;
        let gp = Vec3::new(gu * k.fx * iz, gv * k.fy * iz, -(gu * k.fx * p.x + gv * k.fy * p.y) * iz * iz);
        let pix = idx % (h * w);
        gd.data_mut()[idx] += (rm.transpose() * gp).dot(&ray(k, pix % w, pix / w));
        let grd = &mut gr.data_mut()[9 * i..9 * i + 9];
        for a in 0..3 {
            for c in 0..3 {
                grd[3 * a + c] += gp[a] * q[c];
            }
        }
        let gtd = &mut gt.data_mut()[3 * i..3 * i + 3];
        for a in 0..3 {
            gtd[a] += gp[a];
        }
    });
    vec![needs[0].then_some(gd), needs[1].then_some(gr), needs[2].then_some(gt)]
}

struct Taps {
    x0: isize,
    y0: isize,
    fx: f64,
    fy: f64,
}

fn taps(u: f64, v: f64) -> Taps {
    let (x0, y0) = (u.floor(), v.floor());
    Taps { x0: x0 as isize, y0: y0 as isize, fx: u - x0, fy: v - y0 }
}

fn fetch(src: &[f64], h: usize, w: usize, x: isize, y: isize) -> f64 {
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        0.0
    } else {
        src[y as usize * w + x as usize]
    }
}

/// Bilinear sampling of `image: [B, C, Hs, Ws]` at `coords: [B, H, W, 2]`;
/// taps outside the image read as 0.
pub(crate) fn grid_sample_forward(image: &Array, coords: &Array) -> Array {
    let (b, c, hs, ws) = (image.shape()[0], image.shape()[1], image.shape()[2], image.shape()[3]);
    let (h, w) = (coords.shape()[1], coords.shape()[2]);
    let mut out = Array::zeros(&[b, c, h, w]);
    for i in 0..b {
        for p in 0..h * w {
            let ci = (i * h * w + p) * 2;
            let u = coords.data()[ci];
            let v = coords.data()[ci + 1];
            if !(u.is_finite() && v.is_finite()) {
                continue;
            }
            let tp = taps(u, v);
            for ch in 0..c {
                let src = &image.data()[(i * c + ch) * hs * ws..(i * c + ch + 1) * hs * ws];
                let f = |dx, dy| fetch(src, hs, ws, tp.x0 + dx, tp.y0 + dy);
                let top = f(0, 0) * (1.0 - tp.fx) + f(1, 0) * tp.fx;
                let bot = f(0, 1) * (1.0 - tp.fx) + f(1, 1) * tp.fx;
                out.data_mut()[(i * c + ch) * h * w + p] = top * (1.0 - tp.fy) + bot * tp.fy;
            }
        }
    }
    out
}

/// 1 where the sampling point lies inside `[0, width−1] × [0, height−1]`.
pub(crate) fn grid_sample_mask(coords: &Array, height: usize, width: usize) -> Array {
    let (b, h, w) = (coords.shape()[0], coords.shape()[1], coords.shape()[2]);
    let mut out = Array::zeros(&[b, 1, h, w]);
    for (k, o) in out.data_mut().iter_mut().enumerate() {
        let (u, v) = (coords.data()[2 * k], coords.data()[2 * k + 1]);
        let lo = -BOUNDS_TOLERANCE;
        let inside = u >= lo
            && v >= lo
            && u <= (width - 1) as f64 + BOUNDS_TOLERANCE
            && v <= (height - 1) as f64 + BOUNDS_TOLERANCE;
        *o = if inside { 1.0 } else { 0.0 };
    }
    out
}

pub(crate) fn grid_sample_backward(image: &Array, coords: &Array, g: &Array, needs: &[bool]) -> Vec<Option<Array>> {
    let (b, c, hs, ws) = (image.shape()[0], image.shape()[1], image.shape()[2], image.shape()[3]);
    let (h, w) = (coords.shape()[1], coords.shape()[2]);
    let mut gi = needs[0].then(|| Array::zeros(image.shape()));
    let mut gc = needs[1].then(|| Array::zeros(coords.shape()));
    for i in 0..b {
        for p in 0..h * w {
            let ci = (i * h * w + p) * 2;
            let u = coords.data()[ci];
            let v = coords.data()[ci + 1];
            if !(u.is_finite() && v.is_finite()) {
                continue;
            }
            let tp = taps(u, v);
            let corners = [
                (0, 0, (1.0 - tp.fx) * (1.0 - tp.fy)),
                (1, 0, tp.fx * (1.0 - tp.fy)),
                (0, 1, (1.0 - tp.fx) * tp.fy),
                (1, 1, tp.fx * tp.fy),
            ];
            let (mut du, mut dv) = (0.0, 0.0);
            for ch in 0..c {
                let plane = (i * c + ch) * hs * ws;
                let go = g.data()[(i * c + ch) * h * w + p];
                if go == 0.0 {
                    continue;
                }
                if let Some(gi) = gi.as_mut() {
                    for &(dx, dy, wt) in &corners {
                        let (x, y) = (tp.x0 + dx, tp.y0 + dy);
                        if x >= 0 && y >= 0 && x < ws as isize && y < hs as isize {
                            gi.data_mut()[plane + y as usize * ws + x as usize] += go * wt;
                        }
                    }
                }
                if gc.is_some() {
                    let src = &image.data()[plane..plane + hs * ws];
                    let f = |dx, dy| fetch(src, hs, ws, tp.x0 + dx, tp.y0 + dy);
                    let (i00, i10, i01, i11) = (f(0, 0), f(1, 0), f(0, 1), f(1, 1));
                    du += go * ((i10 - i00) * (1.0 - tp.fy) + (i11 - i01) * tp.fy);
                    dv += go * ((i01 - i00) * (1.0 - tp.fx) + (i11 - i10) * tp.fx);
                }
            }
            if let Some(gc) = gc.as_mut() {
                gc.data_mut()[ci] += du;
                gc.data_mut()[ci + 1] += dv;
            }
        }
    }
    vec![gi, gc]
}
