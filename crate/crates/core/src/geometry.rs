//! Rigid-body geometry: SO(3)/SE(3) exponential and logarithmic maps, pose
//! algebra, and the pinhole camera model.
//!
//! Conventions: depths and translations are in meters; pixel coordinates are
//! `(u, v)` = (column, row) with the origin at the center of the top-left
//! pixel.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this rotation angle the sinc-like coefficients switch to their
/// second-order Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Depths at or below this value are treated as lying on the camera plane.
pub const MIN_PROJECT_DEPTH: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point at depth {0} is on or behind the camera plane")]
    NonPositiveDepth(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Exponential coordinates of a rotation (axis times angle, radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vec3);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vec3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// A 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(pub Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Frobenius norm of `RᵀR − I`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.orthogonality_error() < tol && (self.0.determinant() - 1.0).abs() <= tol
    }
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

/// An element of se(3): rotational part in radians, translational part in
/// meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub rotational: Vec3,
    pub translational: Vec3,
}

impl Twist {
    pub fn new(rotational: Vec3, translational: Vec3) -> Self {
        Self { rotational, translational }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn norm_squared(&self) -> f64 {
        self.rotational.norm_squared() + self.translational.norm_squared()
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (w, v) = (self.rotational, self.translational);
        [w.x, w.y, w.z, v.x, v.y, v.z]
    }
}

/// Skew-symmetric cross-product matrix of `omega`.
pub fn hat(omega: &Vec3) -> Mat3 {
    Mat3::new(
        0.0, -omega.z, omega.y, //
        omega.z, 0.0, -omega.x, //
        -omega.y, omega.x, 0.0,
    )
}

/// Inverse of [`hat`] on the skew-symmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(0.5 * (m[(2, 1)] - m[(1, 2)]), 0.5 * (m[(0, 2)] - m[(2, 0)]), 0.5 * (m[(1, 0)] - m[(0, 1)]))
}

/// `sin θ / θ` and `(1 − cos θ) / θ²`.
pub(crate) fn rodrigues_coefficients(theta: f64) -> (f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let half = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * half * half / (theta * theta))
    }
}

/// `(1 − A / 2B) / θ²`, the quadratic coefficient of the inverse left
/// Jacobian.
pub(crate) fn left_jacobian_inverse_coefficient(theta: f64) -> f64 {
    if theta < 0.1 {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2 * t2 * t2 / 1_209_600.0
    } else {
        let half = 0.5 * theta;
        1.0 / (theta * theta) - half.cos() / (2.0 * theta * half.sin())
    }
}

pub fn exp_so3(omega: &AxisAngle) -> Rotation {
    let w = omega.0;
    let (a, b) = rodrigues_coefficients(w.norm());
    let wh = hat(&w);
    Rotation(Mat3::identity() + wh * a + wh * wh * b)
}

pub fn log_so3(r: &Rotation) -> AxisAngle {
    let m = &r.0;
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // vee(R) = sin θ · n
    let skew = vee(m);
    let sin_theta = skew.norm();
    let theta = sin_theta.atan2(cos_theta);

    if theta < SMALL_ANGLE {
        // θ / sin θ ≈ 1 + θ²/6
        return AxisAngle(skew * (1.0 + theta * theta / 6.0));
    }
    if sin_theta > 1e-2 || cos_theta > 0.0 {
        return AxisAngle(skew * (theta / sin_theta));
    }

    // Near θ = π the skew part vanishes. The symmetric part is
    // cos θ · I + (1 − cos θ) · n nᵀ, so n nᵀ can be read off directly.
    let sym = (m + m.transpose()) * 0.5;
    let outer = (sym - Mat3::identity() * cos_theta) / (1.0 - cos_theta);
    let k = (0..3).max_by(|&i, &j| outer[(i, i)].total_cmp(&outer[(j, j)])).unwrap_or(0);
    let mut axis = Vec3::new(outer[(0, k)], outer[(1, k)], outer[(2, k)]);
    axis /= axis.norm();
    let signed = skew.dot(&axis);
    if signed.abs() > 1e-14 {
        if signed < 0.0 {
            axis = -axis;
        }
    } else if axis[axis.iamax()] < 0.0 {
        axis = -axis;
    }
    AxisAngle(axis * theta)
}

/// Left Jacobian `V(ω)` of SO(3).
pub fn left_jacobian(omega: &Vec3) -> Mat3 {
    let theta = omega.norm();
    let wh = hat(omega);
    let (a, b) = rodrigues_coefficients(theta);
    // (θ − sin θ)/θ³
    let c = if theta < 1e-3 {
        let t2 = theta * theta;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (1.0 - a) / (theta * theta)
    };
    Mat3::identity() + wh * b + wh * wh * c
}

/// Closed-form inverse of [`left_jacobian`].
pub fn left_jacobian_inverse(omega: &Vec3) -> Mat3 {
    let wh = hat(omega);
    Mat3::identity() - wh * 0.5 + wh * wh * left_jacobian_inverse_coefficient(omega.norm())
}

pub fn exp_se3(xi: &Twist) -> Pose {
    let rotation = exp_so3(&AxisAngle(xi.rotational));
    let translation = left_jacobian(&xi.rotational) * xi.translational;
    Pose { rotation, translation }
}

pub fn log_se3(g: &Pose) -> Twist {
    let omega = log_so3(&g.rotation).0;
    let translational = left_jacobian_inverse(&omega) * g.translation;
    Twist::new(omega, translational)
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation::identity(), t)
    }

    /// Builds a pose from exponential rotation coordinates and a translation.
    pub fn from_axis_angle(omega: Vec3, t: Vec3) -> Self {
        Self::new(exp_so3(&AxisAngle(omega)), t)
    }

    /// `self · other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        inverse(self)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.0 * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.0);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Pose {
        Pose::new(Rotation(m.fixed_view::<3, 3>(0, 0).into_owned()), m.fixed_view::<3, 1>(0, 3).into_owned())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.rotation.is_valid(tol) && self.translation.iter().all(|x| x.is_finite())
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(Rotation(a.rotation.0 * b.rotation.0), a.rotation.0 * b.translation + a.translation)
}

pub fn inverse(g: &Pose) -> Pose {
    let rt = g.rotation.0.transpose();
    Pose::new(Rotation(rt), -(rt * g.translation))
}

/// Pinhole intrinsics together with the image size they apply to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(1.0 / self.fx, 0.0, -self.cx / self.fx, 0.0, 1.0 / self.fy, -self.cy / self.fy, 0.0, 0.0, 1.0)
    }
}

pub fn project(k: &CameraIntrinsics, p: &Vec3) -> Result<Vector2<f64>, GeometryError> {
    if p.z <= MIN_PROJECT_DEPTH {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok(Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

pub fn backproject(k: &CameraIntrinsics, x: &Vector2<f64>, z: f64) -> Result<Vec3, GeometryError> {
    if z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok(Vec3::new((x.x - k.cx) / k.fx * z, (x.y - k.cy) / k.fy * z, z))
}
