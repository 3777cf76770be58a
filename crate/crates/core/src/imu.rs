//! IMU pre-integration and state prediction.
//!
//! Both the pre-integrated terms and the world-frame prediction use the same
//! step: the angular rate is averaged over each sample interval, both endpoint
//! readings are rotated into the integration frame, velocity takes their mean
//! and position weighs them 2:1, which is exact for a specific force varying
//! linearly over the interval. The error-state transition is the exact first-order
//! linearization of that same step, so bias corrections through the stored
//! Jacobian agree with re-integration up to second order.

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{exp_so3, right_jacobian, skew, Mat3, Quat, State, Vec3};

pub type Mat15 = SMatrix<f64, 15, 15>;
pub type Mat15x12 = SMatrix<f64, 15, 12>;

/// Row/column offsets of the pre-integration error state `(δα, δβ, δθ, δba, δbw)`.
pub mod pidx {
    pub const ALPHA: usize = 0;
    pub const BETA: usize = 3;
    pub const THETA: usize = 6;
    pub const BA: usize = 9;
    pub const BW: usize = 12;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImuError {
    #[error("no IMU samples in window")]
    Empty,
    #[error("IMU timestamps not strictly increasing at {0}")]
    NonMonotone(f64),
    #[error("IMU data does not cover [{t_begin}, {t_end}]")]
    Coverage { t_begin: f64, t_end: f64 },
    #[error("invalid noise parameter {name} = {value}")]
    BadNoise { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Specific force in the IMU frame (m/s²).
    pub accel: Vec3,
    /// Angular rate in the IMU frame (rad/s).
    pub gyro: Vec3,
}

impl ImuSample {
    pub fn new(timestamp: f64, accel: Vec3, gyro: Vec3) -> Self {
        Self {
            timestamp,
            accel,
            gyro,
        }
    }

    /// Linear interpolation between `self` and `next` at time `t`.
    pub fn lerp(&self, next: &ImuSample, t: f64) -> ImuSample {
        let span = next.timestamp - self.timestamp;
        let s = if span > 0.0 { (t - self.timestamp) / span } else { 0.0 };
        ImuSample {
            timestamp: t,
            accel: self.accel + (next.accel - self.accel) * s,
            gyro: self.gyro + (next.gyro - self.gyro) * s,
        }
    }
}

/// Sensor noise levels used to build the discrete noise covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma_a: f64,
    pub sigma_w: f64,
    pub sigma_ba: f64,
    pub sigma_bw: f64,
    /// Gravity magnitude (m/s²).
    pub gravity: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            sigma_a: 0.02,
            sigma_w: 0.002,
            sigma_ba: 1e-3,
            sigma_bw: 1e-4,
            gravity: 9.81,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), ImuError> {
        for (name, value) in [
            ("sigma_a", self.sigma_a),
            ("sigma_w", self.sigma_w),
            ("sigma_ba", self.sigma_ba),
            ("sigma_bw", self.sigma_bw),
            ("gravity", self.gravity),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ImuError::BadNoise { name, value });
            }
        }
        Ok(())
    }

    fn diagonal(&self) -> SMatrix<f64, 12, 12> {
        let mut q = SMatrix::<f64, 12, 12>::zeros();
        for (k, s) in [self.sigma_a, self.sigma_w, self.sigma_ba, self.sigma_bw].iter().enumerate() {
            for i in 0..3 {
                q[(3 * k + i, 3 * k + i)] = s * s;
            }
        }
        q
    }
}

/// Linearized transition of one sample interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStateBlocks {
    pub f: Mat15,
    pub g: Mat15x12,
}

/// Nominal step: midpoint rotation, trapezoidal velocity and a position update
/// exact for specific force varying linearly over the interval.
pub(crate) fn midpoint_step(
    alpha: &Vec3,
    beta: &Vec3,
    gamma: &Quat,
    s0: &ImuSample,
    s1: &ImuSample,
    bias_a: &Vec3,
    bias_w: &Vec3,
) -> (Vec3, Vec3, Quat) {
    let dt = s1.timestamp - s0.timestamp;
    let w = 0.5 * (s0.gyro + s1.gyro) - bias_w;
    let gamma1 = gamma * exp_so3(&(w * dt));
    let f0 = gamma * (s0.accel - bias_a);
    let f1 = gamma1 * (s1.accel - bias_a);
    let alpha1 = alpha + beta * dt + (2.0 * f0 + f1) * (dt * dt / 6.0);
    let beta1 = beta + 0.5 * (f0 + f1) * dt;
    (alpha1, beta1, Quat::new_normalize(gamma1.into_inner()))
}

/// Transition `F` and noise map `G` of one integration step taken from orientation `gamma`.
pub fn propagate_error_state(
    s0: &ImuSample,
    s1: &ImuSample,
    gamma: &Quat,
    bias_a: &Vec3,
    bias_w: &Vec3,
) -> ErrorStateBlocks {
    use pidx::*;
    let dt = s1.timestamp - s0.timestamp;
    let phi = (0.5 * (s0.gyro + s1.gyro) - bias_w) * dt;
    let d_rot = exp_so3(&phi).to_rotation_matrix().into_inner();
    let r0 = gamma.to_rotation_matrix().into_inner();
    let r1 = r0 * d_rot;
    let a0 = s0.accel - bias_a;
    let a1 = s1.accel - bias_a;
    let jr_dt = right_jacobian(&phi) * dt;

    // Sensitivities of the start and end specific forces to each error input.
    let (df0_dtheta, df1_dtheta) = (-r0 * skew(&a0), -r1 * skew(&a1) * d_rot.transpose());
    let (df0_dba, df1_dba) = (-r0, -r1);
    let df1_dbw = r1 * skew(&a1) * jr_dt;

    // Position weighs the two forces 2:1, velocity evenly.
    let pos = |d0: &Mat3, d1: &Mat3| (2.0 * d0 + d1) * (dt * dt / 6.0);
    let vel = |d0: &Mat3, d1: &Mat3| (d0 + d1) * (0.5 * dt);
    let zero = Mat3::zeros();

    let mut f = Mat15::identity();
    let mut g = Mat15x12::zeros();
    let put = |m: &mut Mat15, r: usize, c: usize, b: &Mat3| m.fixed_view_mut::<3, 3>(r, c).copy_from(b);

    put(&mut f, ALPHA, BETA, &(Mat3::identity() * dt));
    put(&mut f, ALPHA, THETA, &pos(&df0_dtheta, &df1_dtheta));
    put(&mut f, ALPHA, BA, &pos(&df0_dba, &df1_dba));
    put(&mut f, ALPHA, BW, &pos(&zero, &df1_dbw));
    put(&mut f, BETA, THETA, &vel(&df0_dtheta, &df1_dtheta));
    put(&mut f, BETA, BA, &vel(&df0_dba, &df1_dba));
    put(&mut f, BETA, BW, &vel(&zero, &df1_dbw));
    put(&mut f, THETA, THETA, &d_rot.transpose());
    put(&mut f, THETA, BW, &(-jr_dt));

    // Measurement noise enters exactly where the bias it corrupts does.
    let mut put_g = |r: usize, c: usize, b: &Mat3| g.fixed_view_mut::<3, 3>(r, c).copy_from(b);
    put_g(ALPHA, 0, &(-pos(&df0_dba, &df1_dba)));
    put_g(BETA, 0, &(-vel(&df0_dba, &df1_dba)));
    put_g(ALPHA, 3, &(-pos(&zero, &df1_dbw)));
    put_g(BETA, 3, &(-vel(&zero, &df1_dbw)));
    put_g(THETA, 3, &jr_dt);
    put_g(BA, 6, &(Mat3::identity() * dt));
    put_g(BW, 9, &(Mat3::identity() * dt));

    ErrorStateBlocks { f, g }
}

/// Relative motion between two timestamps integrated from IMU readings.
#[derive(Debug, Clone, PartialEq)]
pub struct Preintegration {
    pub alpha: Vec3,
    pub beta: Vec3,
    pub gamma: Quat,
    pub covariance: Mat15,
    pub jacobian: Mat15,
    pub lin_accel_bias: Vec3,
    pub lin_gyro_bias: Vec3,
    pub dt_total: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub noise: NoiseParams,
    samples: Vec<ImuSample>,
}

impl Preintegration {
    /// Empty pre-integration linearized at the given biases.
    pub fn new(bias_a: Vec3, bias_w: Vec3, noise: NoiseParams) -> Self {
        Self {
            alpha: Vec3::zeros(),
            beta: Vec3::zeros(),
            gamma: Quat::identity(),
            covariance: Mat15::zeros(),
            jacobian: Mat15::identity(),
            lin_accel_bias: bias_a,
            lin_gyro_bias: bias_w,
            dt_total: 0.0,
            t_start: f64::NAN,
            t_end: f64::NAN,
            noise,
            samples: Vec::new(),
        }
    }

    /// Integrates a full sample sequence.
    pub fn integrate(samples: &[ImuSample], bias_a: Vec3, bias_w: Vec3, noise: NoiseParams) -> Result<Self, ImuError> {
        if samples.is_empty() {
            return Err(ImuError::Empty);
        }
        let mut p = Self::new(bias_a, bias_w, noise);
        for s in samples {
            p.push(*s)?;
        }
        Ok(p)
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    /// Appends one sample and integrates the interval ending at it.
    pub fn push(&mut self, sample: ImuSample) -> Result<(), ImuError> {
        let Some(prev) = self.samples.last().copied() else {
            self.t_start = sample.timestamp;
            self.t_end = sample.timestamp;
            self.samples.push(sample);
            return Ok(());
        };
        if !(sample.timestamp > prev.timestamp) {
            return Err(ImuError::NonMonotone(sample.timestamp));
        }
        let blocks = propagate_error_state(&prev, &sample, &self.gamma, &self.lin_accel_bias, &self.lin_gyro_bias);
        let (alpha, beta, gamma) = midpoint_step(
            &self.alpha,
            &self.beta,
            &self.gamma,
            &prev,
            &sample,
            &self.lin_accel_bias,
            &self.lin_gyro_bias,
        );
        self.alpha = alpha;
        self.beta = beta;
        self.gamma = gamma;
        let cov = blocks.f * self.covariance * blocks.f.transpose()
            + blocks.g * self.noise.diagonal() * blocks.g.transpose();
        self.covariance = 0.5 * (cov + cov.transpose());
        self.jacobian = blocks.f * self.jacobian;
        self.dt_total += sample.timestamp - prev.timestamp;
        self.t_end = sample.timestamp;
        self.samples.push(sample);
        Ok(())
    }

    pub fn jacobian_block(&self, row: usize, col: usize) -> Mat3 {
        self.jacobian.fixed_view::<3, 3>(row, col).into_owned()
    }

    /// First-order corrected `(α, β, γ)` for new bias estimates.
    pub fn corrected(&self, bias_a: &Vec3, bias_w: &Vec3) -> (Vec3, Vec3, Quat) {
        use pidx::*;
        let dba = bias_a - self.lin_accel_bias;
        let dbw = bias_w - self.lin_gyro_bias;
        let alpha = self.alpha + self.jacobian_block(ALPHA, BA) * dba + self.jacobian_block(ALPHA, BW) * dbw;
        let beta = self.beta + self.jacobian_block(BETA, BA) * dba + self.jacobian_block(BETA, BW) * dbw;
        let gamma = self.gamma * exp_so3(&(self.jacobian_block(THETA, BW) * dbw));
        (alpha, beta, gamma)
    }

    /// Re-integrates the stored samples about a new linearization point.
    pub fn repropagate(&mut self, bias_a: Vec3, bias_w: Vec3) {
        let samples = std::mem::take(&mut self.samples);
        let mut fresh = Self::new(bias_a, bias_w, self.noise);
        for s in samples {
            fresh.push(s).expect("stored samples are strictly increasing");
        }
        *self = fresh;
    }
}

/// First-order bias correction of a pre-integration.
pub fn correct_for_bias(p: &Preintegration, new_bias_a: &Vec3, new_bias_w: &Vec3) -> (Vec3, Vec3, Quat) {
    p.corrected(new_bias_a, new_bias_w)
}

/// Samples covering exactly `[t_begin, t_end]`, with boundary readings linearly
/// interpolated between the straddling samples.
pub fn window_samples(samples: &[ImuSample], t_begin: f64, t_end: f64) -> Result<Vec<ImuSample>, ImuError> {
    const EPS: f64 = 1e-9;
    let coverage = ImuError::Coverage { t_begin, t_end };
    if samples.is_empty() {
        return Err(ImuError::Empty);
    }
    if !(t_end > t_begin) || samples[0].timestamp > t_begin + EPS || samples[samples.len() - 1].timestamp < t_end - EPS {
        return Err(coverage);
    }
    let at = |t: f64| -> ImuSample {
        let k = samples.partition_point(|s| s.timestamp <= t);
        if k == 0 {
            ImuSample { timestamp: t, ..samples[0] }
        } else if k == samples.len() {
            ImuSample { timestamp: t, ..samples[k - 1] }
        } else {
            samples[k - 1].lerp(&samples[k], t)
        }
    };
    let mut out = vec![at(t_begin)];
    out.extend(
        samples
            .iter()
            .filter(|s| s.timestamp > t_begin + EPS && s.timestamp < t_end - EPS)
            .copied(),
    );
    out.push(at(t_end));
    for pair in out.windows(2) {
        if !(pair[1].timestamp > pair[0].timestamp) {
            return Err(ImuError::NonMonotone(pair[1].timestamp));
        }
    }
    Ok(out)
}

/// Pre-integrates the readings of `[t_begin, t_end]` out of a longer stream.
pub fn preintegrate(
    samples: &[ImuSample],
    t_begin: f64,
    t_end: f64,
    bias_a: Vec3,
    bias_w: Vec3,
    noise: NoiseParams,
) -> Result<Preintegration, ImuError> {
    Preintegration::integrate(&window_samples(samples, t_begin, t_end)?, bias_a, bias_w, noise)
}

/// Resamples a stream onto a uniform grid by linear interpolation.
pub fn upsample(samples: &[ImuSample], rate_hz: f64) -> Vec<ImuSample> {
    if samples.len() < 2 || !(rate_hz > 0.0) {
        return samples.to_vec();
    }
    let t0 = samples[0].timestamp;
    let t1 = samples[samples.len() - 1].timestamp;
    let n = ((t1 - t0) * rate_hz + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut k = 0;
    for i in 0..=n {
        let t = t0 + i as f64 / rate_hz;
        while k + 2 < samples.len() && samples[k + 1].timestamp <= t {
            k += 1;
        }
        out.push(samples[k].lerp(&samples[k + 1], t));
    }
    out
}

/// Prediction for the next window: the first state copies the state that
/// shares its timestamp, and the newest state is propagated from `anchor`
/// through the readings of `[anchor.timestamp, t_end]` with biases held fixed.
pub fn predict_states(
    anchor: &State,
    prev_begin: &State,
    samples: &[ImuSample],
    t_end: f64,
    gravity_w: &Vec3,
) -> Result<(State, State), ImuError> {
    let window = window_samples(samples, anchor.timestamp, t_end)?;
    let mut x = *anchor;
    for pair in window.windows(2) {
        x = propagate_state(&x, &pair[0], &pair[1], gravity_w);
    }
    x.timestamp = t_end;
    Ok((*prev_begin, x))
}

/// One world-frame integration step. `gravity_w` is the specific force read at rest.
pub fn propagate_state(x: &State, s0: &ImuSample, s1: &ImuSample, gravity_w: &Vec3) -> State {
    let dt = s1.timestamp - s0.timestamp;
    let w = 0.5 * (s0.gyro + s1.gyro) - x.gyro_bias;
    let rot1 = x.rotation * exp_so3(&(w * dt));
    let acc0 = x.rotation * (s0.accel - x.accel_bias) - gravity_w;
    let acc1 = rot1 * (s1.accel - x.accel_bias) - gravity_w;
    State {
        timestamp: s1.timestamp,
        translation: x.translation + x.velocity * dt + (2.0 * acc0 + acc1) * (dt * dt / 6.0),
        rotation: Quat::new_normalize(rot1.into_inner()),
        velocity: x.velocity + 0.5 * (acc0 + acc1) * dt,
        ..*x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{log_so3, quat_wxyz};
    use crate::simulator::rng::CounterRng;
    use approx::assert_relative_eq;

    fn rand_vec(rng: &mut CounterRng, scale: f64) -> Vec3 {
        Vec3::new(rng.gaussian(), rng.gaussian(), rng.gaussian()) * scale
    }

    /// Smoothly varying readings at `rate` Hz over `[0, duration]`.
    fn stream(rng: &mut CounterRng, duration: f64, rate: f64) -> Vec<ImuSample> {
        let a0 = rand_vec(rng, 1.0) + Vec3::new(0.0, 0.0, 9.81);
        let a1 = rand_vec(rng, 1.0);
        let w0 = rand_vec(rng, 0.5);
        let w1 = rand_vec(rng, 0.5);
        let n = (duration * rate).round() as usize;
        (0..=n)
            .map(|i| {
                let t = i as f64 / rate;
                ImuSample::new(t, a0 + a1 * (3.0 * t).sin(), w0 + w1 * (2.0 * t).cos())
            })
            .collect()
    }

    fn noisy_stream(rng: &mut CounterRng, duration: f64) -> Vec<ImuSample> {
        stream(rng, duration, 100.0)
            .into_iter()
            .map(|s| ImuSample::new(s.timestamp, s.accel + rand_vec(rng, 0.02), s.gyro + rand_vec(rng, 0.002)))
            .collect()
    }

    #[test]
    fn empty_preintegration_invariants() {
        let p = Preintegration::new(Vec3::zeros(), Vec3::zeros(), NoiseParams::default());
        assert_eq!(p.alpha, Vec3::zeros());
        assert_eq!(p.beta, Vec3::zeros());
        assert_eq!(p.gamma, Quat::identity());
        assert_eq!(p.covariance, Mat15::zeros());
        assert_eq!(p.jacobian, Mat15::identity());
        assert_eq!(p.dt_total, 0.0);
    }

    #[test]
    fn constant_accel_closed_form() {
        let a = Vec3::new(0.3, -0.2, 9.81);
        let samples: Vec<_> = (0..=10).map(|i| ImuSample::new(i as f64 * 0.01, a, Vec3::zeros())).collect();
        let p = Preintegration::integrate(&samples, Vec3::zeros(), Vec3::zeros(), NoiseParams::default()).unwrap();
        let t = 0.1;
        assert_relative_eq!(p.alpha, 0.5 * a * t * t, epsilon = 1e-12);
        assert_relative_eq!(p.beta, a * t, epsilon = 1e-12);
        assert_relative_eq!(p.gamma.angle(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(p.dt_total, t, epsilon = 1e-15);
    }

    #[test]
    fn window_of_33ms_at_100hz() {
        let mut rng = CounterRng::new(1, 0);
        let s = stream(&mut rng, 1.0, 100.0);
        let w = window_samples(&s, 0.205, 0.238).unwrap();
        assert_eq!(w.len() - 2, 3);
        let p = Preintegration::integrate(&w, Vec3::zeros(), Vec3::zeros(), NoiseParams::default()).unwrap();
        assert_relative_eq!(p.dt_total, 0.033, epsilon = 1e-12);
        assert_eq!(p.t_start, 0.205);
        assert_eq!(p.t_end, 0.238);
    }

    #[test]
    fn window_rejects_missing_coverage_and_bad_order() {
        let mut rng = CounterRng::new(1, 1);
        let s = stream(&mut rng, 1.0, 100.0);
        assert!(matches!(window_samples(&s, 0.9, 1.2), Err(ImuError::Coverage { .. })));
        assert!(matches!(window_samples(&[], 0.0, 0.1), Err(ImuError::Empty)));
        let mut bad = s.clone();
        bad.swap(3, 4);
        assert!(matches!(
            Preintegration::integrate(&bad, Vec3::zeros(), Vec3::zeros(), NoiseParams::default()),
            Err(ImuError::NonMonotone(_))
        ));
    }

    #[test]
    fn zero_interval_blocks_are_trivial() {
        let s = ImuSample::new(1.0, Vec3::new(1.0, 2.0, 9.0), Vec3::new(0.1, 0.2, 0.3));
        let q = quat_wxyz(0.9, 0.1, 0.3, -0.2);
        let b = propagate_error_state(&s, &s, &q, &Vec3::new(0.1, 0.0, 0.0), &Vec3::zeros());
        assert_relative_eq!(b.f, Mat15::identity(), epsilon = 1e-15);
        assert_relative_eq!(b.g, Mat15x12::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn transition_matches_perturbed_integration() {
        let mut rng = CounterRng::new(2, 0);
        for _ in 0..200 {
            let s0 = ImuSample::new(0.0, rand_vec(&mut rng, 5.0), rand_vec(&mut rng, 1.0));
            let s1 = ImuSample::new(0.01, rand_vec(&mut rng, 5.0), rand_vec(&mut rng, 1.0));
            let (alpha, beta) = (rand_vec(&mut rng, 0.1), rand_vec(&mut rng, 1.0));
            let gamma = exp_so3(&rand_vec(&mut rng, 1.0));
            let (ba, bw) = (rand_vec(&mut rng, 0.1), rand_vec(&mut rng, 0.01));
            let nominal = midpoint_step(&alpha, &beta, &gamma, &s0, &s1, &ba, &bw);
            let f = propagate_error_state(&s0, &s1, &gamma, &ba, &bw).f;
            let mut err_prev = f64::INFINITY;
            for scale in [1e-3, 1e-4] {
                let d = SMatrix::<f64, 15, 1>::from_fn(|_, _| rng.gaussian() * scale);
                let dv = |k: usize| Vec3::new(d[k], d[k + 1], d[k + 2]);
                let pert = midpoint_step(
                    &(alpha + dv(0)),
                    &(beta + dv(3)),
                    &(gamma * exp_so3(&dv(6))),
                    &s0,
                    &s1,
                    &(ba + dv(9)),
                    &(bw + dv(12)),
                );
                let mut actual = SMatrix::<f64, 15, 1>::zeros();
                actual.fixed_rows_mut::<3>(0).copy_from(&(pert.0 - nominal.0));
                actual.fixed_rows_mut::<3>(3).copy_from(&(pert.1 - nominal.1));
                actual.fixed_rows_mut::<3>(6).copy_from(&log_so3(&(nominal.2.inverse() * pert.2)));
                actual.fixed_rows_mut::<6>(9).copy_from(&d.fixed_rows::<6>(9));
                let err = (actual - f * d).norm();
                assert!(err < 50.0 * scale * scale, "err {err} at scale {scale}");
                assert!(err < err_prev);
                err_prev = err;
            }
        }
    }

    #[test]
    fn covariance_is_psd_and_trace_grows() {
        let mut rng = CounterRng::new(3, 0);
        let s = noisy_stream(&mut rng, 0.5);
        let mut p = Preintegration::new(Vec3::zeros(), Vec3::zeros(), NoiseParams::default());
        let mut last_trace = -1.0;
        for sample in &s {
            p.push(*sample).unwrap();
            let trace = p.covariance.trace();
            assert!(trace >= last_trace);
            last_trace = trace;
            assert_relative_eq!(p.covariance, p.covariance.transpose(), epsilon = 1e-12);
            let eig = p.covariance.symmetric_eigenvalues();
            assert!(eig.min() >= -1e-12);
            assert_relative_eq!(p.gamma.quaternion().norm(), 1.0, epsilon = 1e-12);
        }
        assert!(last_trace > 0.0);
    }

    #[test]
    fn short_window_has_smaller_covariance() {
        let mut rng = CounterRng::new(4, 0);
        let s = noisy_stream(&mut rng, 2.0);
        let n = NoiseParams::default();
        for k in 0..50 {
            let t0 = 0.013 + k as f64 * 0.03;
            let short = preintegrate(&s, t0, t0 + 0.033, Vec3::zeros(), Vec3::zeros(), n).unwrap();
            let long = preintegrate(&s, t0, t0 + 0.1, Vec3::zeros(), Vec3::zeros(), n).unwrap();
            assert!(short.covariance.trace() < long.covariance.trace());
        }
    }

    #[test]
    fn concatenation_matches_composition() {
        let mut rng = CounterRng::new(5, 0);
        let s = stream(&mut rng, 1.0, 100.0);
        let n = NoiseParams::default();
        let (ba, bw) = (Vec3::new(0.05, -0.02, 0.1), Vec3::new(0.01, 0.0, -0.02));
        let p02 = preintegrate(&s, 0.1, 0.5, ba, bw, n).unwrap();
        let p01 = preintegrate(&s, 0.1, 0.3, ba, bw, n).unwrap();
        let p12 = preintegrate(&s, 0.3, 0.5, ba, bw, n).unwrap();
        let dt12 = p12.dt_total;
        assert_relative_eq!(p02.alpha, p01.alpha + p01.beta * dt12 + p01.gamma * p12.alpha, epsilon = 1e-9);
        assert_relative_eq!(p02.beta, p01.beta + p01.gamma * p12.beta, epsilon = 1e-9);
        assert!((p02.gamma.inverse() * p01.gamma * p12.gamma).angle() < 1e-9);
    }

    #[test]
    fn bias_correction_is_identity_for_zero_delta() {
        let mut rng = CounterRng::new(6, 0);
        let s = stream(&mut rng, 0.2, 100.0);
        let (ba, bw) = (Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.01, 0.0));
        let p = Preintegration::integrate(&s, ba, bw, NoiseParams::default()).unwrap();
        let (a, b, g) = correct_for_bias(&p, &ba, &bw);
        assert_eq!((a, b, g), (p.alpha, p.beta, p.gamma));
    }

    #[test]
    fn bias_correction_matches_reintegration() {
        let mut rng = CounterRng::new(7, 0);
        let n = NoiseParams::default();
        for _ in 0..20 {
            let s = stream(&mut rng, 1.0, 100.0);
            let p = preintegrate(&s, 0.402, 0.435, Vec3::zeros(), Vec3::zeros(), n).unwrap();
            let dbw = Vec3::new(1e-3, 0.0, 0.0);
            let (_, _, gamma) = p.corrected(&Vec3::zeros(), &dbw);
            let truth = preintegrate(&s, 0.402, 0.435, Vec3::zeros(), dbw, n).unwrap();
            assert!((gamma.inverse() * truth.gamma).angle() < 1e-5);
            let dba = Vec3::new(1e-2, 0.0, 0.0);
            let (alpha, _, _) = p.corrected(&dba, &Vec3::zeros());
            let truth = preintegrate(&s, 0.402, 0.435, dba, Vec3::zeros(), n).unwrap();
            assert!((alpha - truth.alpha).norm() < 1e-8);
        }
    }

    #[test]
    fn repropagate_equals_fresh_integration() {
        let mut rng = CounterRng::new(8, 0);
        let s = stream(&mut rng, 0.1, 100.0);
        let n = NoiseParams::default();
        let mut p = Preintegration::integrate(&s, Vec3::zeros(), Vec3::zeros(), n).unwrap();
        let (ba, bw) = (Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.01, 0.02, 0.03));
        p.repropagate(ba, bw);
        assert_eq!(p, Preintegration::integrate(&s, ba, bw, n).unwrap());
    }

    #[test]
    fn upsample_doubles_rate() {
        let s: Vec<_> = (0..=50)
            .map(|i| {
                let t = i as f64 * 0.02;
                ImuSample::new(t, Vec3::new(t, 0.0, 9.81), Vec3::new(0.0, 2.0 * t, 0.0))
            })
            .collect();
        let up = upsample(&s, 100.0);
        assert_eq!(up.len(), 101);
        for u in &up {
            assert_relative_eq!(u.accel.x, u.timestamp, epsilon = 1e-12);
            assert_relative_eq!(u.gyro.y, 2.0 * u.timestamp, epsilon = 1e-12);
        }
    }

    #[test]
    fn predict_at_rest_stays_put() {
        let g = Vec3::new(0.0, 0.0, 9.81);
        let rot = exp_so3(&Vec3::new(0.1, -0.2, 0.3));
        let s: Vec<_> = (0..=10)
            .map(|i| ImuSample::new(i as f64 * 0.01, rot.inverse() * g, Vec3::zeros()))
            .collect();
        let anchor = State {
            rotation: rot,
            translation: Vec3::new(1.0, 2.0, 3.0),
            ..State::at_rest(0.0)
        };
        let prev = State::at_rest(-0.066);
        let (xb, xe) = predict_states(&anchor, &prev, &s, 0.033, &g).unwrap();
        assert_eq!(xb, prev);
        assert_relative_eq!(xe.translation, anchor.translation, epsilon = 1e-12);
        assert_relative_eq!(xe.velocity, Vec3::zeros(), epsilon = 1e-12);
        assert_eq!(xe.timestamp, 0.033);
    }

    #[test]
    fn predict_constant_rate_rotation() {
        let g = Vec3::new(0.0, 0.0, 9.81);
        let s: Vec<_> = (0..=10)
            .map(|i| ImuSample::new(i as f64 * 0.01, g, Vec3::new(0.0, 0.0, 1.0)))
            .collect();
        let anchor = State {
            accel_bias: Vec3::new(0.0, 0.0, 0.0),
            gyro_bias: Vec3::zeros(),
            ..State::at_rest(0.0)
        };
        let (_, xe) = predict_states(&anchor, &anchor, &s, 0.033, &g).unwrap();
        let expected = exp_so3(&Vec3::new(0.0, 0.0, 0.033));
        assert!((xe.rotation.inverse() * expected).angle() < 1e-6);
        assert_eq!(xe.accel_bias, anchor.accel_bias);
        assert_eq!(xe.gyro_bias, anchor.gyro_bias);
    }

    #[test]
    fn predict_keeps_biases() {
        let mut rng = CounterRng::new(9, 0);
        let s = stream(&mut rng, 0.2, 100.0);
        let anchor = State {
            accel_bias: Vec3::new(0.1, -0.1, 0.05),
            gyro_bias: Vec3::new(0.01, 0.02, -0.01),
            ..State::at_rest(0.05)
        };
        let (_, xe) = predict_states(&anchor, &anchor, &s, 0.083, &Vec3::new(0.0, 0.0, 9.81)).unwrap();
        assert_eq!(xe.accel_bias, anchor.accel_bias);
        assert_eq!(xe.gyro_bias, anchor.gyro_bias);
        assert!(predict_states(&anchor, &anchor, &s, 0.5, &Vec3::zeros()).is_err());
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseParams::default().validate().is_ok());
        let bad = NoiseParams {
            sigma_w: 0.0,
            ..NoiseParams::default()
        };
        assert!(matches!(bad.validate(), Err(ImuError::BadNoise { name: "sigma_w", .. })));
    }

    proptest::proptest! {
        #[test]
        fn gamma_stays_unit(seed in 0u64..500) {
            let mut rng = CounterRng::new(seed, 3);
            let s = stream(&mut rng, 0.3, 200.0);
            let p = Preintegration::integrate(&s, Vec3::zeros(), Vec3::zeros(), NoiseParams::default()).unwrap();
            proptest::prop_assert!((p.gamma.quaternion().norm() - 1.0).abs() < 1e-12);
        }
    }
}
