//! Rotation and rigid-motion primitives shared by every other module.
//!
//! Conventions, fixed for the whole crate:
//!
//! - quaternions are Hamilton and written w-first, `[w, x, y, z]`;
//! - the rotation of a [`Pose`] or [`State`] maps body-frame vectors into the world frame;
//! - rotation perturbations are right-multiplicative, `q ⊞ δθ = q ⊗ Exp(δθ)`;
//! - a 15-dim state error is ordered `(δt, δθ, δv, δba, δbw)`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, SVector, UnitQuaternion, Vector3, Vector4};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = UnitQuaternion<f64>;
pub type Vec15 = SVector<f64, 15>;

/// Offsets of each block inside a 15-dim state error vector.
pub mod idx {
    pub const POS: usize = 0;
    pub const ROT: usize = 3;
    pub const VEL: usize = 6;
    pub const BA: usize = 9;
    pub const BW: usize = 12;
}

/// Below this dot product magnitude gap, `slerp` degrades to normalized lerp.
const SLERP_LINEAR_THRESHOLD: f64 = 1e-8;
const SMALL_ANGLE: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate interpolation interval [{t_begin}, {t_end}]")]
    DegenerateInterval { t_begin: f64, t_end: f64 },
    #[error("time {t} outside interpolation interval [{t_begin}, {t_end}]")]
    OutOfInterval { t: f64, t_begin: f64, t_end: f64 },
}

/// Flips `q` into the `w >= 0` hemisphere.
pub fn canonical(q: Quat) -> Quat {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Builds a unit quaternion from w-first components, normalizing and canonicalizing.
pub fn quat_wxyz(w: f64, x: f64, y: f64, z: f64) -> Quat {
    canonical(UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
}

/// Components of `q` as a w-first 4-vector.
pub fn wxyz(q: &Quaternion<f64>) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

fn from_wxyz(v: &Vector4<f64>) -> Quaternion<f64> {
    Quaternion::new(v[0], v[1], v[2], v[3])
}

/// Quaternion exponential of a rotation vector.
pub fn exp_so3(phi: &Vec3) -> Quat {
    let theta = phi.norm();
    let half = 0.5 * theta;
    let (w, k) = if theta < SMALL_ANGLE {
        // Taylor terms keep the result exact to machine precision near zero.
        (1.0 - theta * theta / 8.0, 0.5 - theta * theta / 48.0)
    } else {
        (half.cos(), half.sin() / theta)
    };
    canonical(UnitQuaternion::new_unchecked(Quaternion::new(
        w,
        k * phi.x,
        k * phi.y,
        k * phi.z,
    )))
}

/// Rotation vector of `q` on the shortest branch (angle in `[0, π]`).
pub fn log_so3(q: &Quat) -> Vec3 {
    let q = canonical(*q);
    let v = q.imag();
    let s = v.norm();
    if s < SMALL_ANGLE {
        // 2·atan2(s, w)/s → 2/w near the identity.
        return v * (2.0 / q.w);
    }
    let theta = 2.0 * s.atan2(q.w);
    v * (theta / s)
}

/// Matrix such that `skew(v) * u == v.cross(u)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3): `Exp(φ + δ) ≈ Exp(φ)·Exp(Jr(φ)·δ)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-10 {
        return Mat3::identity() - 0.5 * k + k * k / 6.0;
    }
    let theta = theta2.sqrt();
    Mat3::identity() - (1.0 - theta.cos()) / theta2 * k
        + (theta - theta.sin()) / (theta2 * theta) * k * k
}

/// Inverse of [`right_jacobian`].
pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-10 {
        return Mat3::identity() + 0.5 * k + k * k / 12.0;
    }
    let theta = theta2.sqrt();
    let c = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Mat3::identity() + 0.5 * k + c * k * k
}

/// Left multiplication matrix: `quat_left(a) * wxyz(b) == wxyz(a ⊗ b)`.
pub fn quat_left(q: &Quaternion<f64>) -> Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

/// Right multiplication matrix: `quat_right(b) * wxyz(a) == wxyz(a ⊗ b)`.
pub fn quat_right(q: &Quaternion<f64>) -> Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, z, -y, //
        y, -z, w, x, //
        z, y, -x, w,
    )
}

/// Lower-right 3×3 block of a 4×4 quaternion multiplication matrix.
pub fn vec_block(m: &Matrix4<f64>) -> Mat3 {
    m.fixed_view::<3, 3>(1, 1).into_owned()
}

/// Spherical linear interpolation on the shortest arc.
pub fn slerp(q0: &Quat, q1: &Quat, alpha: f64) -> Quat {
    let a = wxyz(q0.quaternion());
    let mut b = wxyz(q1.quaternion());
    let mut dot = a.dot(&b);
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    let v = if dot > 1.0 - SLERP_LINEAR_THRESHOLD {
        a * (1.0 - alpha) + b * alpha
    } else {
        let theta = dot.min(1.0).acos();
        let s = theta.sin();
        a * (((1.0 - alpha) * theta).sin() / s) + b * ((alpha * theta).sin() / s)
    };
    canonical(UnitQuaternion::from_quaternion(from_wxyz(&v)))
}

/// A rigid transform. Applied to a point as `R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Quat::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::new(inv, -(inv * self.translation))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Pose at fraction `alpha` between `self` and `other` (lerp + slerp).
    pub fn interpolate(&self, other: &Pose, alpha: f64) -> Pose {
        Pose {
            rotation: slerp(&self.rotation, &other.rotation, alpha),
            translation: self.translation * (1.0 - alpha) + other.translation * alpha,
        }
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose::new(
            self.rotation * rhs.rotation,
            self.rotation * rhs.translation + self.translation,
        )
    }
}

/// Fixed LiDAR-to-IMU transform, set once from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Extrinsics {
    lidar_to_imu: Pose,
}

impl Extrinsics {
    pub fn new(lidar_to_imu: Pose) -> Self {
        Self { lidar_to_imu }
    }

    pub fn lidar_to_imu(&self) -> &Pose {
        &self.lidar_to_imu
    }

    /// Maps a point from the LiDAR frame into the IMU (body) frame.
    pub fn to_body(&self, p: &Vec3) -> Vec3 {
        self.lidar_to_imu.transform_point(p)
    }
}

/// Full navigation state of the IMU body at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub timestamp: f64,
    pub translation: Vec3,
    pub rotation: Quat,
    pub velocity: Vec3,
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
}

impl State {
    /// Identity pose at rest with zero biases.
    pub fn at_rest(timestamp: f64) -> Self {
        Self {
            timestamp,
            translation: Vec3::zeros(),
            rotation: Quat::identity(),
            velocity: Vec3::zeros(),
            accel_bias: Vec3::zeros(),
            gyro_bias: Vec3::zeros(),
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.translation)
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Applies a `(δt, δθ, δv, δba, δbw)` error-state update.
    pub fn retract(&self, delta: &Vec15) -> State {
        let block = |i: usize| delta.fixed_rows::<3>(i).into_owned();
        State {
            timestamp: self.timestamp,
            translation: self.translation + block(idx::POS),
            rotation: canonical(self.rotation * exp_so3(&block(idx::ROT))),
            velocity: self.velocity + block(idx::VEL),
            accel_bias: self.accel_bias + block(idx::BA),
            gyro_bias: self.gyro_bias + block(idx::BW),
        }
    }

    /// Inverse of [`State::retract`]: `self.retract(&self.local(&other)) ≈ other`.
    pub fn local(&self, other: &State) -> Vec15 {
        let mut d = Vec15::zeros();
        d.fixed_rows_mut::<3>(idx::POS)
            .copy_from(&(other.translation - self.translation));
        d.fixed_rows_mut::<3>(idx::ROT)
            .copy_from(&log_so3(&(self.rotation.inverse() * other.rotation)));
        d.fixed_rows_mut::<3>(idx::VEL)
            .copy_from(&(other.velocity - self.velocity));
        d.fixed_rows_mut::<3>(idx::BA)
            .copy_from(&(other.accel_bias - self.accel_bias));
        d.fixed_rows_mut::<3>(idx::BW)
            .copy_from(&(other.gyro_bias - self.gyro_bias));
        d
    }
}

/// Interpolation weight of `t` in `[t_begin, t_end]`.
pub fn interval_fraction(t_begin: f64, t_end: f64, t: f64) -> Result<f64, GeometryError> {
    let span = t_end - t_begin;
    if !(span > 0.0) {
        return Err(GeometryError::DegenerateInterval { t_begin, t_end });
    }
    let tol = 1e-9 * span.max(1.0);
    if t < t_begin - tol || t > t_end + tol {
        return Err(GeometryError::OutOfInterval { t, t_begin, t_end });
    }
    Ok(((t - t_begin) / span).clamp(0.0, 1.0))
}

/// State at time `t` between two bracketing states: linear in every vector
/// field, slerp on rotation.
pub fn interpolate_state(xb: &State, xe: &State, t: f64) -> Result<State, GeometryError> {
    let a = interval_fraction(xb.timestamp, xe.timestamp, t)?;
    let lerp = |b: &Vec3, e: &Vec3| b * (1.0 - a) + e * a;
    Ok(State {
        timestamp: t,
        translation: lerp(&xb.translation, &xe.translation),
        rotation: slerp(&xb.rotation, &xe.rotation, a),
        velocity: lerp(&xb.velocity, &xe.velocity),
        accel_bias: lerp(&xb.accel_bias, &xe.accel_bias),
        gyro_bias: lerp(&xb.gyro_bias, &xe.gyro_bias),
    })
}
