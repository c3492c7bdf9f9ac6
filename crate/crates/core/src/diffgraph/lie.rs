//! Rotation layers on batches of 3-vectors `[B, 3]` and matrices `[B, 3, 3]`.

use super::Array;
use crate::geometry::{
    self, hat, left_jacobian_inverse_coefficient, rodrigues_coefficients, AxisAngle, Mat3, Rotation, Vec3,
};

fn vec_at(x: &Array, i: usize) -> Vec3 {
    let d = &x.data()[3 * i..3 * i + 3];
    Vec3::new(d[0], d[1], d[2])
}

fn mat_at(x: &Array, i: usize) -> Mat3 {
    Mat3::from_row_slice(&x.data()[9 * i..9 * i + 9])
}

fn put_vec(x: &mut Array, i: usize, v: &Vec3) {
    x.data_mut()[3 * i..3 * i + 3].copy_from_slice(v.as_slice());
}

fn put_mat(x: &mut Array, i: usize, m: &Mat3) {
    let dst = &mut x.data_mut()[9 * i..9 * i + 9];
    for r in 0..3 {
        for c in 0..3 {
            dst[3 * r + c] = m[(r, c)];
        }
    }
}

/// `⟨G, hat(e_i)⟩` for i = 0, 1, 2.
fn skew_pairing(g: &Mat3) -> Vec3 {
    Vec3::new(g[(2, 1)] - g[(1, 2)], g[(0, 2)] - g[(2, 0)], g[(1, 0)] - g[(0, 1)])
}

/// Radial derivatives `(dA/dθ)/θ` and `(dB/dθ)/θ` of the Rodrigues
/// coefficients `A = sin θ/θ`, `B = (1 − cos θ)/θ²`.
fn rodrigues_derivatives(theta: f64) -> (f64, f64) {
    if theta < 1e-2 {
        let t2 = theta * theta;
        (-1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0, -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0)
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        ((theta * c - s) / (t2 * theta), (theta * s - 2.0 * (1.0 - c)) / (t2 * t2))
    }
}

pub(crate) fn exp_so3_forward(w: &Array) -> Array {
    let b = w.shape()[0];
    let mut out = Array::zeros(&[b, 3, 3]);
    for i in 0..b {
        let r = geometry::exp_so3(&AxisAngle(vec_at(w, i)));
        put_mat(&mut out, i, &r.0);
    }
    out
}

pub(crate) fn exp_so3_backward(w: &Array, g: &Array) -> Array {
    let b = w.shape()[0];
    let mut gw = Array::zeros(w.shape());
    for i in 0..b {
        let omega = vec_at(w, i);
        let gm = mat_at(g, i);
        let theta = omega.norm();
        let (a, bb) = rodrigues_coefficients(theta);
        let (c, d) = rodrigues_derivatives(theta);
        let wh = hat(&omega);
        let radial = c * gm.dot(&wh) + d * gm.dot(&(wh * wh));
        let v = omega * radial + skew_pairing(&gm) * a - (skew_pairing(&(gm * wh)) + skew_pairing(&(wh * gm))) * bb;
        put_vec(&mut gw, i, &v);
    }
    gw
}

pub(crate) fn log_so3_forward(r: &Array) -> Array {
    let b = r.shape()[0];
    let mut out = Array::zeros(&[b, 3]);
    for i in 0..b {
        let w = geometry::log_so3(&Rotation(mat_at(r, i))).0;
        put_vec(&mut out, i, &w);
    }
    out
}

/// Away from θ = π the logarithm is `θ/s · w` with `w = vee(R)`,
/// `s = ‖w‖`, `θ = atan2(s, (tr R − 1)/2)`; that formula is differentiated
/// for arbitrary 3×3 inputs. Near π the tangent-space gradient is used.
pub(crate) fn log_so3_backward(r: &Array, out: &Array, g: &Array) -> Array {
    let b = r.shape()[0];
    let mut gr = Array::zeros(r.shape());
    for i in 0..b {
        let m = mat_at(r, i);
        let gw_out = vec_at(g, i);
        let w = geometry::vee(&m);
        let s = w.norm();
        let raw_c = (m.trace() - 1.0) * 0.5;
        let c = raw_c.clamp(-1.0, 1.0);
        let theta = s.atan2(c);
        let mut gm = Mat3::zeros();
        if theta < geometry::SMALL_ANGLE {
            add_vee_grad(&mut gm, &gw_out);
        } else if s > 1e-2 || c > 0.0 {
            let f = theta / s;
            let den = s * s + c * c;
            let dtheta_ds = c / den;
            let dtheta_dc = -s / den;
            let df_ds = (dtheta_ds * s - theta) / (s * s);
            let df_dc = dtheta_dc / s;
            let gf = gw_out.dot(&w);
            let gw = gw_out * f + w * (gf * df_ds / s);
            add_vee_grad(&mut gm, &gw);
            if raw_c > -1.0 && raw_c < 1.0 {
                let gc = gf * df_dc;
                for k in 0..3 {
                    gm[(k, k)] += 0.5 * gc;
                }
            }
        } else {
            let omega = vec_at(out, i);
            let jinv = geometry::left_jacobian_inverse(&omega);
            gm = m * hat(&(jinv * gw_out * 0.5));
        }
        put_mat(&mut gr, i, &gm);
    }
    gr
}

/// Gradient of `w = vee(M)` pulled back to `M`.
fn add_vee_grad(gm: &mut Mat3, gw: &Vec3) {
    gm[(2, 1)] += 0.5 * gw.x;
    gm[(1, 2)] -= 0.5 * gw.x;
    gm[(0, 2)] += 0.5 * gw.y;
    gm[(2, 0)] -= 0.5 * gw.y;
    gm[(1, 0)] += 0.5 * gw.z;
    gm[(0, 1)] -= 0.5 * gw.z;
}

fn rot_x(a: f64) -> (Mat3, Mat3) {
    let (s, c) = a.sin_cos();
    (Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c), Mat3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s))
}

fn rot_y(a: f64) -> (Mat3, Mat3) {
    let (s, c) = a.sin_cos();
    (Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c), Mat3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s))
}

fn rot_z(a: f64) -> (Mat3, Mat3) {
    let (s, c) = a.sin_cos();
    (Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0), Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0))
}

/// Euler angles `(x, y, z)` to `Rz · Ry · Rx`.
pub(crate) fn euler_forward(e: &Array) -> Array {
    let b = e.shape()[0];
    let mut out = Array::zeros(&[b, 3, 3]);
    for i in 0..b {
        let v = vec_at(e, i);
        let r = rot_z(v.z).0 * rot_y(v.y).0 * rot_x(v.x).0;
        put_mat(&mut out, i, &r);
    }
    out
}

pub(crate) fn euler_backward(e: &Array, g: &Array) -> Array {
    let b = e.shape()[0];
    let mut ge = Array::zeros(e.shape());
    for i in 0..b {
        let v = vec_at(e, i);
        let gm = mat_at(g, i);
        let (rx, dx) = rot_x(v.x);
        let (ry, dy) = rot_y(v.y);
        let (rz, dz) = rot_z(v.z);
        let d = Vec3::new(gm.dot(&(rz * ry * dx)), gm.dot(&(rz * dy * rx)), gm.dot(&(dz * ry * rx)));
        put_vec(&mut ge, i, &d);
    }
    ge
}

/// `(dE/dθ)/θ` for the inverse-left-Jacobian coefficient `E(θ)`.
fn jl_inv_coefficient_derivative(theta: f64) -> f64 {
    if theta < 0.2 {
        let t2 = theta * theta;
        1.0 / 360.0 + t2 / 7560.0 + t2 * t2 / 201_600.0
    } else {
        let half = 0.5 * theta;
        let (s, c) = half.sin_cos();
        let de = -2.0 / theta.powi(3) + c / (2.0 * theta * theta * s) + 1.0 / (4.0 * theta * s * s);
        de / theta
    }
}

/// `V(ω)⁻¹ t` per batch row.
pub(crate) fn jl_inv_apply_forward(w: &Array, t: &Array) -> Array {
    let b = w.shape()[0];
    let mut out = Array::zeros(&[b, 3]);
    for i in 0..b {
        let omega = vec_at(w, i);
        let u = geometry::left_jacobian_inverse(&omega) * vec_at(t, i);
        put_vec(&mut out, i, &u);
    }
    out
}

pub(crate) fn jl_inv_apply_backward(w: &Array, t: &Array, g: &Array) -> (Array, Array) {
    let b = w.shape()[0];
    let mut gw = Array::zeros(w.shape());
    let mut gt = Array::zeros(t.shape());
    for i in 0..b {
        let omega = vec_at(w, i);
        let tv = vec_at(t, i);
        let gv = vec_at(g, i);
        let theta = omega.norm();
        let e = left_jacobian_inverse_coefficient(theta);
        let f = jl_inv_coefficient_derivative(theta);
        // V⁻ᵀ g = g + ½ ω×g + E ω×(ω×g)
        let gt_i = gv + omega.cross(&gv) * 0.5 + omega.cross(&omega.cross(&gv)) * e;
        // ω×(ω×t) = ω(ω·t) − θ² t
        let q = omega * omega.dot(&tv) - tv * (theta * theta);
        let gw_i = gv.cross(&tv) * 0.5
            + omega * (f * gv.dot(&q))
            + (gv * omega.dot(&tv) + tv * gv.dot(&omega) - omega * (2.0 * gv.dot(&tv))) * e;
        put_vec(&mut gt, i, &gt_i);
        put_vec(&mut gw, i, &gw_i);
    }
    (gw, gt)
}
