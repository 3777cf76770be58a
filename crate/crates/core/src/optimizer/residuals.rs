//! Residual blocks and their analytic Jacobians.
//!
//! Jacobian columns follow the state error ordering `(δt, δθ, δv, δba, δbw)`
//! with rotations perturbed on the right.

use nalgebra::SMatrix;
use thiserror::Error;

use crate::geometry::{
    canonical, exp_so3, idx, log_so3, quat_left, quat_right, right_jacobian, right_jacobian_inv, skew, vec_block,
    GeometryError, Mat3, Quat, State, Vec15, Vec3,
};
use crate::imu::{pidx, Mat15, Preintegration};
use crate::map::PlaneFit;

pub type Row15 = SMatrix<f64, 1, 15>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResidualError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("pre-integration spans [{p_start}, {p_end}] but states are at {t_from} and {t_to}")]
    TimestampMismatch {
        p_start: f64,
        p_end: f64,
        t_from: f64,
        t_to: f64,
    },
}

/// Scalar point-to-plane residual with Jacobians for its two bracketing states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointResidual {
    pub value: f64,
    pub jac_begin: Row15,
    pub jac_end: Row15,
}

/// Interpolated motion between two states, with the per-pair terms of the
/// point Jacobians computed once.
#[derive(Debug, Clone, Copy)]
pub struct SegmentMotion {
    t_begin: f64,
    t_end: f64,
    trans_begin: Vec3,
    trans_end: Vec3,
    rot_begin: Mat3,
    phi: Vec3,
    jr_inv_phi: Mat3,
    exp_phi_t: Mat3,
}

impl SegmentMotion {
    pub fn new(x_begin: &State, x_end: &State) -> Self {
        let phi = log_so3(&(x_begin.rotation.inverse() * x_end.rotation));
        Self {
            t_begin: x_begin.timestamp,
            t_end: x_end.timestamp,
            trans_begin: x_begin.translation,
            trans_end: x_end.translation,
            rot_begin: x_begin.rotation_matrix(),
            phi,
            jr_inv_phi: right_jacobian_inv(&phi),
            exp_phi_t: exp_so3(&phi).to_rotation_matrix().into_inner().transpose(),
        }
    }

    fn at(&self, t: f64) -> Result<(f64, Mat3, Mat3, Vec3), GeometryError> {
        let a = crate::geometry::interval_fraction(self.t_begin, self.t_end, t)?;
        let partial = exp_so3(&(self.phi * a)).to_rotation_matrix().into_inner();
        let trans = self.trans_begin * (1.0 - a) + self.trans_end * a;
        Ok((a, partial, self.rot_begin * partial, trans))
    }

    /// Interpolated body pose at `t` applied to `point_body`.
    pub fn transform(&self, point_body: &Vec3, t: f64) -> Result<Vec3, GeometryError> {
        let (_, _, rot, trans) = self.at(t)?;
        Ok(rot * point_body + trans)
    }

    pub fn value(&self, point_body: &Vec3, t: f64, plane: &PlaneFit, weight: f64) -> Result<f64, GeometryError> {
        Ok(weight * plane.signed_distance(&self.transform(point_body, t)?))
    }

    pub fn residual(&self, point_body: &Vec3, t: f64, plane: &PlaneFit, weight: f64) -> Result<PointResidual, GeometryError> {
        let (a, partial, r_p, trans) = self.at(t)?;
        let value = weight * plane.signed_distance(&(r_p * point_body + trans));

        // Sensitivity of the interpolated rotation to right perturbations of each end.
        let jr_a = right_jacobian(&(self.phi * a)) * self.jr_inv_phi * a;
        let dq_begin = partial.transpose() - jr_a * self.exp_phi_t;

        let n_t = plane.normal.transpose() * weight;
        let d_rot = -(n_t * r_p * skew(point_body));
        let mut jac_begin = Row15::zeros();
        let mut jac_end = Row15::zeros();
        jac_begin.fixed_view_mut::<1, 3>(0, idx::POS).copy_from(&(n_t * (1.0 - a)));
        jac_end.fixed_view_mut::<1, 3>(0, idx::POS).copy_from(&(n_t * a));
        jac_begin.fixed_view_mut::<1, 3>(0, idx::ROT).copy_from(&(d_rot * dq_begin));
        jac_end.fixed_view_mut::<1, 3>(0, idx::ROT).copy_from(&(d_rot * jr_a));
        Ok(PointResidual {
            value,
            jac_begin,
            jac_end,
        })
    }
}

/// Signed plane distance of a body-frame point moved by the state interpolated
/// at `t`, scaled by `weight`.
pub fn point_to_plane_residual(
    point_body: &Vec3,
    t: f64,
    x_begin: &State,
    x_end: &State,
    plane: &PlaneFit,
    weight: f64,
) -> Result<PointResidual, GeometryError> {
    SegmentMotion::new(x_begin, x_end).residual(point_body, t, plane, weight)
}

/// The same residual tied to the first and last states of the whole window.
pub fn additional_point_to_plane_residual(
    point_body: &Vec3,
    t: f64,
    x_first: &State,
    x_last: &State,
    plane: &PlaneFit,
    weight: f64,
) -> Result<PointResidual, GeometryError> {
    point_to_plane_residual(point_body, t, x_first, x_last, plane, weight)
}

/// 15-row relative-motion residual, rows ordered `(α, β, θ, ba, bw)` to match
/// the pre-integration covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuResidual {
    pub value: Vec15,
    pub jac_from: Mat15,
    pub jac_to: Mat15,
}

fn vec4_xyz(q: &Quat) -> Vec3 {
    q.imag()
}

/// Pre-integration residual between consecutive states. The pre-integration
/// is corrected to `x_from`'s biases before comparison.
pub fn imu_residual(
    x_from: &State,
    x_to: &State,
    preint: &Preintegration,
    gravity_w: &Vec3,
) -> Result<ImuResidual, ResidualError> {
    if (preint.t_start - x_from.timestamp).abs() > 1e-6 || (preint.t_end - x_to.timestamp).abs() > 1e-6 {
        return Err(ResidualError::TimestampMismatch {
            p_start: preint.t_start,
            p_end: preint.t_end,
            t_from: x_from.timestamp,
            t_to: x_to.timestamp,
        });
    }
    let dt = preint.dt_total;
    let (alpha, beta, gamma) = preint.corrected(&x_from.accel_bias, &x_from.gyro_bias);
    let ri_t = x_from.rotation_matrix().transpose();
    let u_alpha = x_to.translation - x_from.translation - x_from.velocity * dt + 0.5 * gravity_w * dt * dt;
    let u_beta = x_to.velocity - x_from.velocity + gravity_w * dt;
    let q_rel = x_from.rotation.inverse() * x_to.rotation;
    let q_err = canonical(gamma.inverse() * q_rel);

    let mut value = Vec15::zeros();
    value.fixed_rows_mut::<3>(pidx::ALPHA).copy_from(&(ri_t * u_alpha - alpha));
    value.fixed_rows_mut::<3>(pidx::BETA).copy_from(&(ri_t * u_beta - beta));
    value.fixed_rows_mut::<3>(pidx::THETA).copy_from(&(2.0 * vec4_xyz(&q_err)));
    value
        .fixed_rows_mut::<3>(pidx::BA)
        .copy_from(&(x_to.accel_bias - x_from.accel_bias));
    value
        .fixed_rows_mut::<3>(pidx::BW)
        .copy_from(&(x_to.gyro_bias - x_from.gyro_bias));

    let j_block = |r, c| preint.jacobian_block(r, c);
    let dbw = x_from.gyro_bias - preint.lin_gyro_bias;
    let j_gamma_bw = j_block(pidx::THETA, pidx::BW);
    let i3 = Mat3::identity();

    let mut jf = Mat15::zeros();
    let mut jt = Mat15::zeros();
    let put = |m: &mut Mat15, r: usize, c: usize, b: Mat3| m.fixed_view_mut::<3, 3>(r, c).copy_from(&b);

    put(&mut jf, pidx::ALPHA, idx::POS, -ri_t);
    put(&mut jf, pidx::ALPHA, idx::ROT, skew(&(ri_t * u_alpha)));
    put(&mut jf, pidx::ALPHA, idx::VEL, -ri_t * dt);
    put(&mut jf, pidx::ALPHA, idx::BA, -j_block(pidx::ALPHA, pidx::BA));
    put(&mut jf, pidx::ALPHA, idx::BW, -j_block(pidx::ALPHA, pidx::BW));

    put(&mut jf, pidx::BETA, idx::ROT, skew(&(ri_t * u_beta)));
    put(&mut jf, pidx::BETA, idx::VEL, -ri_t);
    put(&mut jf, pidx::BETA, idx::BA, -j_block(pidx::BETA, pidx::BA));
    put(&mut jf, pidx::BETA, idx::BW, -j_block(pidx::BETA, pidx::BW));

    let gamma_inv = gamma.inverse();
    put(
        &mut jf,
        pidx::THETA,
        idx::ROT,
        -vec_block(&(quat_left(gamma_inv.quaternion()) * quat_right(q_rel.quaternion()))) * sign_of(&gamma_inv, &q_rel),
    );
    put(
        &mut jf,
        pidx::THETA,
        idx::BW,
        -vec_block(&quat_right(q_err.quaternion())) * right_jacobian(&(j_gamma_bw * dbw)) * j_gamma_bw,
    );
    put(&mut jf, pidx::BA, idx::BA, -i3);
    put(&mut jf, pidx::BW, idx::BW, -i3);

    put(&mut jt, pidx::ALPHA, idx::POS, ri_t);
    put(&mut jt, pidx::BETA, idx::VEL, ri_t);
    put(&mut jt, pidx::THETA, idx::ROT, vec_block(&quat_left(q_err.quaternion())));
    put(&mut jt, pidx::BA, idx::BA, i3);
    put(&mut jt, pidx::BW, idx::BW, i3);

    Ok(ImuResidual {
        value,
        jac_from: jf,
        jac_to: jt,
    })
}

/// `+1` when `a ⊗ b` is already on the canonical hemisphere, else `−1`.
fn sign_of(a: &Quat, b: &Quat) -> f64 {
    if (a * b).w >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `a⁻¹ ⊗ b` on the canonical hemisphere. Terms are paired so that equal
/// inputs give an exactly zero vector part.
fn relative_rotation(a: &Quat, b: &Quat) -> Quat {
    let (wa, xa, ya, za) = (a.w, a.i, a.j, a.k);
    let (wb, xb, yb, zb) = (b.w, b.i, b.j, b.k);
    let w = wa * wb + (xa * xb + ya * yb + za * zb);
    let x = (wa * xb - wb * xa) - (ya * zb - za * yb);
    let y = (wa * yb - wb * ya) - (za * xb - xa * zb);
    let z = (wa * zb - wb * za) - (xa * yb - ya * xb);
    canonical(Quat::new_unchecked(nalgebra::Quaternion::new(w, x, y, z)))
}

/// Difference between the window's first state and the previous solution at
/// the same instant, rows in state order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyResidual {
    pub value: Vec15,
    pub jacobian: Mat15,
}

pub fn consistency_residual(x_b: &State, anchor: &State) -> ConsistencyResidual {
    let q = relative_rotation(&anchor.rotation, &x_b.rotation);
    let mut value = Vec15::zeros();
    value
        .fixed_rows_mut::<3>(idx::POS)
        .copy_from(&(x_b.translation - anchor.translation));
    value.fixed_rows_mut::<3>(idx::ROT).copy_from(&(2.0 * vec4_xyz(&q)));
    value
        .fixed_rows_mut::<3>(idx::VEL)
        .copy_from(&(x_b.velocity - anchor.velocity));
    value
        .fixed_rows_mut::<3>(idx::BA)
        .copy_from(&(x_b.accel_bias - anchor.accel_bias));
    value
        .fixed_rows_mut::<3>(idx::BW)
        .copy_from(&(x_b.gyro_bias - anchor.gyro_bias));
    let mut jacobian = Mat15::identity();
    jacobian
        .fixed_view_mut::<3, 3>(idx::ROT, idx::ROT)
        .copy_from(&vec_block(&quat_left(q.quaternion())));
    ConsistencyResidual { value, jacobian }
}
