//! Analytic platform trajectories.
//!
//! Moving trajectories follow a path `p(φ)` whose phase advances with a
//! speed profile: at rest for `static_time`, a half-cosine ramp up to cruise
//! speed over `ramp_time`, then constant. Yaw follows the path tangent; roll
//! and pitch may oscillate. All derivatives are closed form.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::geometry::{Mat3, Pose, Quat, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Static,
    ConstantVelocity,
    Circle,
    FigureEight,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("invalid trajectory parameter: {0}")]
    Invalid(String),
    #[error("analytic {quantity} disagrees with finite differences at t = {t} by {error}")]
    Inconsistent { quantity: &'static str, t: f64, error: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// Cruise speed (m/s); for the figure eight, the phase rate times `radius`.
    pub speed: f64,
    /// Circle radius or figure-eight half width (m).
    pub radius: f64,
    pub duration: f64,
    pub start: [f64; 3],
    /// Initial heading about world z (rad).
    pub heading: f64,
    pub static_time: f64,
    pub ramp_time: f64,
    /// Roll/pitch oscillation amplitude (rad) and frequency (Hz).
    pub attitude_amplitude: f64,
    pub attitude_frequency: f64,
}

impl TrajectorySpec {
    pub fn stationary(duration: f64) -> Self {
        Self {
            kind: TrajectoryKind::Static,
            speed: 0.0,
            radius: 0.0,
            duration,
            start: [0.0; 3],
            heading: 0.0,
            static_time: duration,
            ramp_time: 0.0,
            attitude_amplitude: 0.0,
            attitude_frequency: 0.0,
        }
    }

    pub fn constant_velocity(speed: f64, duration: f64) -> Self {
        Self {
            kind: TrajectoryKind::ConstantVelocity,
            speed,
            static_time: 1.5,
            ramp_time: 1.0,
            ..Self::stationary(duration)
        }
    }

    pub fn circle(radius: f64, speed: f64, duration: f64) -> Self {
        Self {
            kind: TrajectoryKind::Circle,
            radius,
            ..Self::constant_velocity(speed, duration)
        }
    }

    pub fn figure_eight(half_width: f64, speed: f64, duration: f64) -> Self {
        Self {
            kind: TrajectoryKind::FigureEight,
            radius: half_width,
            ..Self::constant_velocity(speed, duration)
        }
    }
}

/// Full kinematic state of the body at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub position: Vec3,
    pub rotation: Quat,
    pub velocity: Vec3,
    /// World-frame acceleration (m/s²).
    pub acceleration: Vec3,
    /// Body-frame angular rate (rad/s).
    pub angular_velocity: Vec3,
}

impl Kinematics {
    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.position)
    }
}

/// A validated trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    spec: TrajectorySpec,
}

impl Trajectory {
    /// Validates parameters and checks every analytic derivative against
    /// central differences over the whole duration.
    pub fn new(spec: TrajectorySpec) -> Result<Self, TrajectoryError> {
        let bad = |m: &str| Err(TrajectoryError::Invalid(m.to_string()));
        if !(spec.duration > 0.0) {
            return bad("duration must be positive");
        }
        if spec.kind != TrajectoryKind::Static && !(spec.speed > 0.0) {
            return bad("speed must be positive");
        }
        if matches!(spec.kind, TrajectoryKind::Circle | TrajectoryKind::FigureEight) && !(spec.radius > 0.0) {
            return bad("radius must be positive");
        }
        if spec.static_time < 0.0 || spec.ramp_time < 0.0 || spec.attitude_amplitude.abs() > 0.5 {
            return bad("negative timing or excessive attitude amplitude");
        }
        let traj = Self { spec };
        traj.check_derivatives()?;
        Ok(traj)
    }

    pub fn spec(&self) -> &TrajectorySpec {
        &self.spec
    }

    pub fn duration(&self) -> f64 {
        self.spec.duration
    }

    /// Arc parameter `s` and its first two time derivatives.
    fn profile(&self, t: f64) -> (f64, f64, f64) {
        let s = &self.spec;
        let tau = t - s.static_time;
        let v = s.speed;
        if s.kind == TrajectoryKind::Static || (tau <= 0.0 && (s.static_time > 0.0 || s.ramp_time > 0.0)) {
            return (0.0, 0.0, 0.0);
        }
        if tau < s.ramp_time {
            let k = PI / s.ramp_time;
            (
                0.5 * v * (tau - (k * tau).sin() / k),
                0.5 * v * (1.0 - (k * tau).cos()),
                0.5 * v * k * (k * tau).sin(),
            )
        } else {
            (0.5 * v * s.ramp_time + v * (tau - s.ramp_time), v, 0.0)
        }
    }

    /// Path point and its first two derivatives with respect to `s`.
    fn path(&self, s: f64) -> (Vec3, Vec3, Vec3) {
        let r = self.spec.radius;
        match self.spec.kind {
            TrajectoryKind::Static | TrajectoryKind::ConstantVelocity => (Vec3::new(s, 0.0, 0.0), Vec3::x(), Vec3::zeros()),
            TrajectoryKind::Circle => {
                let a = s / r;
                (
                    Vec3::new(r * a.sin(), r * (1.0 - a.cos()), 0.0),
                    Vec3::new(a.cos(), a.sin(), 0.0),
                    Vec3::new(-a.sin(), a.cos(), 0.0) / r,
                )
            }
            TrajectoryKind::FigureEight => {
                let a = s / r;
                (
                    Vec3::new(r * a.sin(), 0.5 * r * (2.0 * a).sin(), 0.0),
                    Vec3::new(a.cos(), (2.0 * a).cos(), 0.0),
                    Vec3::new(-a.sin(), -2.0 * (2.0 * a).sin(), 0.0) / r,
                )
            }
        }
    }

    /// Roll and pitch with first derivatives.
    fn attitude(&self, t: f64) -> ((f64, f64), (f64, f64)) {
        let a = self.spec.attitude_amplitude;
        let w = 2.0 * PI * self.spec.attitude_frequency;
        let roll = (a * (w * t).sin(), a * w * (w * t).cos());
        let pitch = (a * (w * t + 1.0).sin(), a * w * (w * t + 1.0).cos());
        (roll, pitch)
    }

    pub fn at(&self, t: f64) -> Kinematics {
        let spec = &self.spec;
        let (s, sd, sdd) = self.profile(t);
        let (p, dp, ddp) = self.path(s);
        let heading_rot = Mat3::new(
            spec.heading.cos(),
            -spec.heading.sin(),
            0.0,
            spec.heading.sin(),
            spec.heading.cos(),
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let start = Vec3::from(spec.start);
        let position = start + heading_rot * p;
        let velocity = heading_rot * dp * sd;
        let acceleration = heading_rot * (ddp * sd * sd + dp * sdd);

        let yaw = spec.heading + dp.y.atan2(dp.x);
        let yaw_rate = (dp.x * ddp.y - dp.y * ddp.x) / (dp.x * dp.x + dp.y * dp.y) * sd;
        let ((roll, roll_rate), (pitch, pitch_rate)) = self.attitude(t);
        let rotation = Quat::from_euler_angles(roll, pitch, yaw);
        // Body rates of a Z-Y-X Euler sequence.
        let angular_velocity = Vec3::new(
            roll_rate - yaw_rate * pitch.sin(),
            pitch_rate * roll.cos() + yaw_rate * roll.sin() * pitch.cos(),
            -pitch_rate * roll.sin() + yaw_rate * roll.cos() * pitch.cos(),
        );
        Kinematics {
            position,
            rotation,
            velocity,
            acceleration,
            angular_velocity,
        }
    }

    fn check_derivatives(&self) -> Result<(), TrajectoryError> {
        let h = 1e-5;
        let n = 200;
        for i in 0..=n {
            let t = (self.spec.duration - 2.0 * h) * i as f64 / n as f64 + h;
            let (a, b, k) = (self.at(t - h), self.at(t + h), self.at(t));
            let checks = [
                ("velocity", ((b.position - a.position) / (2.0 * h) - k.velocity).norm()),
                ("acceleration", ((b.velocity - a.velocity) / (2.0 * h) - k.acceleration).norm()),
                (
                    "angular rate",
                    (crate::geometry::log_so3(&(a.rotation.inverse() * b.rotation)) / (2.0 * h) - k.angular_velocity)
                        .norm(),
                ),
            ];
            for (quantity, error) in checks {
                if error > 1e-4 {
                    return Err(TrajectoryError::Inconsistent { quantity, t, error });
                }
            }
        }
        Ok(())
    }
}
