#![allow(dead_code)]

use std::io::Write;
use std::sync::{Mutex, MutexGuard};

use lio_core::geometry::{State, Vec3, exp_so3};
use lio_core::imu::ImuSample;
use lio_core::simulator::rng::CounterRng;
use nalgebra::{Matrix3, UnitQuaternion};

static SERIAL: Mutex<()> = Mutex::new(());

/// Runs timed tests one at a time so their wall-clock budgets are not shared.
pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints an uncaptured verdict line.
pub fn verdict(name: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout();
    let _ = writeln!(out, "{name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    let _ = out.flush();
}

pub fn rv(rng: &mut CounterRng, scale: f64) -> Vec3 {
    Vec3::new(rng.gaussian(), rng.gaussian(), rng.gaussian()) * scale
}

pub fn random_state(rng: &mut CounterRng, t: f64) -> State {
    State {
        timestamp: t,
        translation: rv(rng, 3.0),
        rotation: exp_so3(&rv(rng, 1.0)),
        velocity: rv(rng, 1.0),
        accel_bias: rv(rng, 0.05),
        gyro_bias: rv(rng, 0.01),
    }
}

/// IMU reading linearly interpolated at `t`.
fn reading(samples: &[ImuSample], t: f64) -> (Vec3, Vec3) {
    let i = samples.partition_point(|s| s.timestamp <= t).clamp(1, samples.len() - 1);
    let (a, b) = (&samples[i - 1], &samples[i]);
    let f = (t - a.timestamp) / (b.timestamp - a.timestamp);
    (a.accel + (b.accel - a.accel) * f, a.gyro + (b.gyro - a.gyro) * f)
}

/// Relative position, velocity and rotation over `[t0, t1]` from direct
/// integration of the linearly interpolated readings with `substeps` steps
/// per sample interval.
pub fn fine_step_integration(
    samples: &[ImuSample],
    t0: f64,
    t1: f64,
    accel_bias: Vec3,
    gyro_bias: Vec3,
    substeps: usize,
) -> (Vec3, Vec3, UnitQuaternion<f64>) {
    let sample_dt = (samples[samples.len() - 1].timestamp - samples[0].timestamp) / (samples.len() - 1) as f64;
    let n = ((t1 - t0) / sample_dt * substeps as f64).ceil() as usize;
    let h = (t1 - t0) / n as f64;
    let mut rot = Matrix3::identity();
    let mut pos = Vec3::zeros();
    let mut vel = Vec3::zeros();
    for k in 0..n {
        let t = t0 + k as f64 * h;
        let (a0, _) = reading(samples, t);
        let (_, w_mid) = reading(samples, t + 0.5 * h);
        let (a1, _) = reading(samples, t + h);
        let next = rot * exp_so3(&((w_mid - gyro_bias) * h)).to_rotation_matrix().into_inner();
        let f0 = rot * (a0 - accel_bias);
        let f1 = next * (a1 - accel_bias);
        pos += vel * h + (2.0 * f0 + f1) * (h * h / 6.0);
        vel += (f0 + f1) * (0.5 * h);
        rot = next;
    }
    let q = UnitQuaternion::from_matrix(&rot);
    (pos, vel, q)
}
