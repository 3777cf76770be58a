//! Spinning LiDAR and strapdown IMU models driven by an analytic trajectory.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use super::rng::CounterRng;
use super::trajectory::Trajectory;
use super::world::WorldModel;
use crate::geometry::{Extrinsics, Pose, Vec3, quat_wxyz, wxyz};
use crate::imu::ImuSample;
use crate::sweep::{RawSweep, TimedPoint};

/// Generator stream identifiers; one independent sequence per sensor.
pub const IMU_STREAM: u64 = 1;
pub const LIDAR_STREAM: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("invalid sensor parameter `{name}` = {value}")]
    Invalid { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarSpec {
    pub rings: usize,
    pub azimuth_steps: usize,
    /// Revolutions per second.
    pub rev_rate: f64,
    pub max_range: f64,
    pub min_range: f64,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    /// Standard deviation of additive range noise (m).
    pub range_noise: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            rings: 32,
            azimuth_steps: 360,
            rev_rate: 10.0,
            max_range: 40.0,
            min_range: 0.3,
            min_elevation_deg: -15.0,
            max_elevation_deg: 15.0,
            range_noise: 0.0,
        }
    }
}

impl LidarSpec {
    pub fn rays_per_revolution(&self) -> usize {
        self.rings * self.azimuth_steps
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rev_rate
    }

    /// Ring elevations, uniformly spaced (rad).
    fn ring_elevations(&self) -> Vec<f64> {
        let (lo, hi) = (self.min_elevation_deg.to_radians(), self.max_elevation_deg.to_radians());
        if self.rings == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..self.rings)
            .map(|r| lo + (hi - lo) * r as f64 / (self.rings - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSpec {
    pub rate: f64,
    /// Per-sample white noise standard deviations used for generation.
    pub accel_noise: f64,
    pub gyro_noise: f64,
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
}

impl Default for ImuSpec {
    fn default() -> Self {
        Self {
            rate: 100.0,
            accel_noise: 0.0,
            gyro_noise: 0.0,
            accel_bias: [0.0; 3],
            gyro_bias: [0.0; 3],
        }
    }
}

/// Serializable LiDAR-to-IMU transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicsSpec {
    pub translation: [f64; 3],
    /// Unit quaternion, `w` first.
    pub rotation_wxyz: [f64; 4],
}

impl Default for ExtrinsicsSpec {
    fn default() -> Self {
        Self {
            translation: [0.0; 3],
            rotation_wxyz: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

impl ExtrinsicsSpec {
    pub fn from_pose(pose: &Pose) -> Self {
        let q = wxyz(pose.rotation.quaternion());
        Self {
            translation: pose.translation.into(),
            rotation_wxyz: [q[0], q[1], q[2], q[3]],
        }
    }

    pub fn pose(&self) -> Pose {
        let [w, x, y, z] = self.rotation_wxyz;
        Pose::new(quat_wxyz(w, x, y, z), Vec3::from(self.translation))
    }

    pub fn extrinsics(&self) -> Extrinsics {
        Extrinsics::new(self.pose())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorSpec {
    pub lidar: LidarSpec,
    pub imu: ImuSpec,
    pub extrinsics: ExtrinsicsSpec,
}

impl SensorSpec {
    pub fn validate(&self) -> Result<(), SensorError> {
        let checks = [
            ("lidar.rev_rate", self.lidar.rev_rate, self.lidar.rev_rate > 0.0),
            ("lidar.rings", self.lidar.rings as f64, self.lidar.rings > 0),
            ("lidar.azimuth_steps", self.lidar.azimuth_steps as f64, self.lidar.azimuth_steps > 0),
            ("lidar.max_range", self.lidar.max_range, self.lidar.max_range > self.lidar.min_range),
            ("lidar.range_noise", self.lidar.range_noise, self.lidar.range_noise >= 0.0),
            ("imu.rate", self.imu.rate, self.imu.rate > 0.0),
            ("imu.accel_noise", self.imu.accel_noise, self.imu.accel_noise >= 0.0),
            ("imu.gyro_noise", self.imu.gyro_noise, self.imu.gyro_noise >= 0.0),
        ];
        for (name, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(SensorError::Invalid { name, value });
            }
        }
        let q = self.extrinsics.rotation_wxyz;
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(SensorError::Invalid {
                name: "extrinsics.rotation_wxyz",
                value: norm,
            });
        }
        Ok(())
    }
}

/// IMU samples at `k / rate` for every instant within `[0, duration]`.
///
/// `â = Rᵀ(a + g) + b_a + n_a`, `ω̂ = ω + b_ω + n_ω`, where `g` is the
/// specific force of gravity in the world frame.
pub fn simulate_imu(traj: &Trajectory, spec: &ImuSpec, gravity_w: &Vec3, seed: u64) -> Vec<ImuSample> {
    let mut rng = CounterRng::new(seed, IMU_STREAM);
    let n = (traj.duration() * spec.rate + 1e-9).floor() as usize;
    let ba = Vec3::from(spec.accel_bias);
    let bw = Vec3::from(spec.gyro_bias);
    (0..=n)
        .map(|k| {
            let t = k as f64 / spec.rate;
            let kin = traj.at(t);
            let r = kin.rotation.to_rotation_matrix();
            let na = Vec3::new(rng.gaussian(), rng.gaussian(), rng.gaussian()) * spec.accel_noise;
            let nw = Vec3::new(rng.gaussian(), rng.gaussian(), rng.gaussian()) * spec.gyro_noise;
            ImuSample::new(
                t,
                r.transpose() * (kin.acceleration + gravity_w) + ba + na,
                kin.angular_velocity + bw + nw,
            )
        })
        .collect()
}

/// Pose of the LiDAR in the world at `t`.
pub fn lidar_pose(traj: &Trajectory, extrinsics: &Extrinsics, t: f64) -> Pose {
    traj.at(t).pose() * *extrinsics.lidar_to_imu()
}

/// Lazily ray-casts one revolution at a time.
///
/// Every azimuth step fires all rings at the same instant from the true
/// sensor pose; hits are expressed in the LiDAR frame at that instant.
pub struct LidarSimulator<'a> {
    traj: &'a Trajectory,
    world: &'a WorldModel,
    spec: LidarSpec,
    extrinsics: Extrinsics,
    elevations: Vec<(f64, f64)>,
    rng: CounterRng,
    revolution: usize,
    revolutions: usize,
}

impl<'a> LidarSimulator<'a> {
    pub fn new(traj: &'a Trajectory, world: &'a WorldModel, spec: &SensorSpec, seed: u64) -> Self {
        let lidar = spec.lidar;
        let revolutions = (traj.duration() * lidar.rev_rate + 1e-9).floor() as usize;
        Self {
            traj,
            world,
            spec: lidar,
            extrinsics: spec.extrinsics.extrinsics(),
            elevations: lidar.ring_elevations().iter().map(|e| (e.cos(), e.sin())).collect(),
            rng: CounterRng::new(seed, LIDAR_STREAM),
            revolution: 0,
            revolutions,
        }
    }

    pub fn revolutions(&self) -> usize {
        self.revolutions
    }

    fn firing_time(&self, step: usize) -> f64 {
        (self.revolution * self.spec.azimuth_steps + step) as f64 / (self.spec.azimuth_steps as f64 * self.spec.rev_rate)
    }

    fn scan(&mut self) -> Vec<TimedPoint> {
        let mut points = Vec::with_capacity(self.spec.rays_per_revolution());
        for step in 0..self.spec.azimuth_steps {
            let t = self.firing_time(step);
            let pose = lidar_pose(self.traj, &self.extrinsics, t);
            let rot = pose.rotation_matrix();
            let az = 2.0 * PI * step as f64 / self.spec.azimuth_steps as f64;
            let (sa, ca) = az.sin_cos();
            for &(ce, se) in &self.elevations {
                let local = Vec3::new(ce * ca, ce * sa, se);
                let dir = rot * local;
                let Some((range, _)) = self.world.cast(&pose.translation, &dir, self.spec.max_range) else {
                    continue;
                };
                let range = if self.spec.range_noise > 0.0 {
                    range + self.spec.range_noise * self.rng.gaussian()
                } else {
                    range
                };
                if range < self.spec.min_range {
                    continue;
                }
                points.push(TimedPoint::new(t, local * range));
            }
        }
        points
    }
}

impl Iterator for LidarSimulator<'_> {
    type Item = RawSweep;

    fn next(&mut self) -> Option<RawSweep> {
        if self.revolution >= self.revolutions {
            return None;
        }
        let t_begin = self.revolution as f64 / self.spec.rev_rate;
        let t_end = (self.revolution + 1) as f64 / self.spec.rev_rate;
        let points = self.scan();
        self.revolution += 1;
        // Scans of a valid world always yield returns inside the window.
        RawSweep::new(points, t_begin, t_end).ok()
    }
}

/// All LiDAR points of the run, time ordered.
pub fn simulate_lidar(traj: &Trajectory, world: &WorldModel, spec: &SensorSpec, seed: u64) -> Vec<TimedPoint> {
    LidarSimulator::new(traj, world, spec, seed)
        .flat_map(|s| s.points().to_vec())
        .collect()
}
