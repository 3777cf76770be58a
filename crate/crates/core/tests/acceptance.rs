mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::{fine_step_integration, random_state, rv, serial, verdict};
use lio_core::geometry::{State, Vec15, Vec3, log_so3};
use lio_core::imu::{ImuSample, NoiseParams, Preintegration, pidx, preintegrate, propagate_state, window_samples};
use lio_core::init::{init_gyro_bias_motion, init_velocity_gravity, static_init};
use lio_core::map::{MapConfig, PlaneFit, VoxelMap};
use lio_core::optimizer::{additional_point_to_plane_residual, consistency_residual, imu_residual, point_to_plane_residual};
use lio_core::pipeline::eval::DEFAULT_MATCH_WINDOW;
use lio_core::pipeline::{PipelineConfig, RunOutput, eval_ate, run_packets};
use lio_core::simulator::rng::CounterRng;
use lio_core::simulator::{Scenario, SimulatedRun};
use lio_core::sweep::{PacketReconstructor, RawSweep, ReconstructedSweep, StreamReconstructor, TimedPoint, downsample};
use nalgebra::SMatrix;

const G: f64 = 9.81;

fn within(name: &str, elapsed: Duration, budget: Duration) -> bool {
    let ok = elapsed < budget;
    verdict(name, ok, &format!("{:.2} s of {:.0} s", elapsed.as_secs_f64(), budget.as_secs_f64()));
    ok
}

fn noiseless_imu(preset: &str) -> Vec<ImuSample> {
    let sc = Scenario::preset(preset, 1).unwrap();
    let traj = sc.validate().unwrap();
    sc.imu_samples(&traj)
}

fn random_sweeps(rate: f64, count: usize, points: usize, seed: u64) -> Vec<RawSweep> {
    let mut rng = CounterRng::new(seed, 0);
    let period = 1.0 / rate;
    (0..count)
        .map(|k| {
            let (tb, te) = (k as f64 * period, (k + 1) as f64 * period);
            let mut pts: Vec<TimedPoint> = (0..points)
                .map(|_| TimedPoint::new(rng.uniform_in(tb, te), rv(&mut rng, 10.0)))
                .collect();
            pts.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
            RawSweep::new(pts, tb, te).unwrap()
        })
        .collect()
}

fn check_output_rate(outputs: &[ReconstructedSweep], raw_rate: f64, raw_count: usize) -> Result<(), String> {
    if outputs.len() != 3 * raw_count - 2 {
        return Err(format!("{} outputs from {raw_count} sweeps", outputs.len()));
    }
    let span = raw_count as f64 / raw_rate;
    let expected = 3.0 * raw_rate * span;
    if (outputs.len() as f64 - expected).abs() > 3.0 {
        return Err(format!("{} outputs over {span} s, expected about {expected}", outputs.len()));
    }
    for w in outputs.windows(2) {
        let step = w[1].t_end - w[0].t_end;
        if (step - 1.0 / (3.0 * raw_rate)).abs() > 1e-9 {
            return Err(format!("output spacing {step}"));
        }
    }
    for o in outputs {
        if (o.t_end - o.t_begin - 1.0 / raw_rate).abs() > 1e-9 {
            return Err(format!("output span {}", o.t_end - o.t_begin));
        }
    }
    Ok(())
}

fn reconstruct_packets(sweeps: &[RawSweep]) -> Vec<ReconstructedSweep> {
    let mut rec = PacketReconstructor::new(0.5, 1e-6);
    sweeps.iter().flat_map(|s| rec.push(s).unwrap()).collect()
}

fn reconstruct_stream(sweeps: &[RawSweep], rate: f64) -> Vec<ReconstructedSweep> {
    let mut rec = StreamReconstructor::new(1.0 / (3.0 * rate), 0.5, 1e-6, Some(sweeps[0].t_begin()));
    let mut out = Vec::new();
    for p in sweeps.iter().flat_map(|s| s.points().iter()) {
        rec.push(*p);
        while let Some(r) = rec.pop() {
            out.push(r.unwrap());
        }
    }
    rec.finish(sweeps.last().unwrap().t_end());
    while let Some(r) = rec.pop() {
        out.push(r.unwrap());
    }
    out
}

#[test]
fn criterion_01_reconstruction_rate() {
    let _guard = serial();
    let start = Instant::now();
    let mut failures = Vec::new();
    for (rate, count) in [(10.0, 60), (7.0, 42)] {
        let sweeps = random_sweeps(rate, count, 2000, 1);
        for (mode, outputs) in [("packet", reconstruct_packets(&sweeps)), ("stream", reconstruct_stream(&sweeps, rate))] {
            if let Err(e) = check_output_rate(&outputs, rate, count) {
                failures.push(format!("{mode} {rate} Hz: {e}"));
            }
        }
    }
    let timely = within("criterion 1 runtime", start.elapsed(), Duration::from_secs(1));
    let detail = if failures.is_empty() { "3N-2 outputs at three times the input rate".to_string() } else { failures.join("; ") };
    verdict("criterion 1 (sweep reconstruction rate)", failures.is_empty() && timely, &detail);
    assert!(failures.is_empty(), "{failures:?}");
    assert!(timely);
}

#[test]
fn criterion_02_preintegration_matches_fine_integration() {
    let _guard = serial();
    let start = Instant::now();
    let samples = noiseless_imu("circle");
    let mut rng = CounterRng::new(2, 0);
    let mut worst = [0.0_f64; 3];
    for _ in 0..100 {
        let t0 = rng.uniform_in(3.0, 28.0);
        let t1 = t0 + 0.033;
        let (ba, bw) = (rv(&mut rng, 0.05), rv(&mut rng, 0.005));
        let p = preintegrate(&samples, t0, t1, ba, bw, NoiseParams::default()).unwrap();
        let (alpha, beta, gamma) = fine_step_integration(&samples, t0, t1, ba, bw, 100);
        worst[0] = worst[0].max((p.alpha - alpha).norm() / alpha.norm());
        worst[1] = worst[1].max((p.beta - beta).norm() / beta.norm());
        worst[2] = worst[2].max(log_so3(&(gamma.inverse() * p.gamma)).norm() / log_so3(&gamma).norm().max(1e-3));
    }
    let ok = worst.iter().all(|&e| e < 1e-6);
    let timely = within("criterion 2 runtime", start.elapsed(), Duration::from_secs(10));
    verdict(
        "criterion 2 (pre-integration vs fine-step integration)",
        ok && timely,
        &format!("worst relative errors alpha {:.2e} beta {:.2e} gamma {:.2e}", worst[0], worst[1], worst[2]),
    );
    assert!(ok, "{worst:?}");
    assert!(timely);
}

fn correction_error(samples: &[ImuSample], p: &Preintegration, dba: Vec3, dbw: Vec3) -> f64 {
    let (ba, bw) = (p.lin_accel_bias + dba, p.lin_gyro_bias + dbw);
    let (alpha, beta, gamma) = p.corrected(&ba, &bw);
    let full = preintegrate(samples, p.t_start, p.t_end, ba, bw, p.noise).unwrap();
    (alpha - full.alpha).norm() + (beta - full.beta).norm() + log_so3(&(gamma.inverse() * full.gamma)).norm()
}

#[test]
fn criterion_03_bias_correction_is_second_order() {
    let _guard = serial();
    let start = Instant::now();
    let samples = noiseless_imu("figure_eight");
    let mut rng = CounterRng::new(3, 0);
    let mut worst_ratio = f64::INFINITY;
    for _ in 0..50 {
        let t0 = rng.uniform_in(1.0, 28.0);
        let p = preintegrate(&samples, t0, t0 + 0.1, rv(&mut rng, 0.05), rv(&mut rng, 0.005), NoiseParams::default()).unwrap();
        let (ua, uw) = (rv(&mut rng, 1.0).normalize(), rv(&mut rng, 1.0).normalize());
        let delta = 1e-3;
        let coarse = correction_error(&samples, &p, ua * delta, uw * delta);
        let fine = correction_error(&samples, &p, ua * delta / 2.0, uw * delta / 2.0);
        worst_ratio = worst_ratio.min(coarse / fine);
    }
    let ok = worst_ratio >= 3.5;
    let timely = within("criterion 3 runtime", start.elapsed(), Duration::from_secs(5));
    verdict("criterion 3 (bias correction error is quadratic)", ok && timely, &format!("smallest reduction on halving {worst_ratio:.3}"));
    assert!(ok, "{worst_ratio}");
    assert!(timely);
}

const FD_STEP: f64 = 1e-6;

fn numeric<const R: usize>(x: &State, f: impl Fn(&State) -> SMatrix<f64, R, 1>) -> SMatrix<f64, R, 15> {
    let mut out = SMatrix::<f64, R, 15>::zeros();
    for k in 0..15 {
        let mut d = Vec15::zeros();
        d[k] = FD_STEP;
        out.set_column(k, &((f(&x.retract(&d)) - f(&x.retract(&-d))) / (2.0 * FD_STEP)));
    }
    out
}

/// Worst ratio of the analytic-numeric gap to its allowance; at most 1 passes.
fn excess<const R: usize, const C: usize>(analytic: &SMatrix<f64, R, C>, numeric: &SMatrix<f64, R, C>) -> f64 {
    (analytic - numeric).amax() / (1e-8 + 1e-5 * numeric.amax())
}

fn random_plane(rng: &mut CounterRng) -> PlaneFit {
    PlaneFit {
        normal: rv(rng, 1.0).normalize(),
        d: rng.uniform_in(-3.0, 3.0),
        inlier_count: 20,
        planarity: 1.0,
    }
}

fn random_samples(rng: &mut CounterRng, t0: f64, n: usize) -> Vec<ImuSample> {
    let accel0 = Vec3::new(0.0, 0.0, G) + rv(rng, 1.0);
    let gyro0 = rv(rng, 0.5);
    (0..n)
        .map(|k| ImuSample::new(t0 + 0.01 * k as f64, accel0 + rv(rng, 0.3), gyro0 + rv(rng, 0.1)))
        .collect()
}

fn propagate(x: &State, samples: &[ImuSample], g: &Vec3) -> State {
    samples.windows(2).fold(*x, |s, w| propagate_state(&s, &w[0], &w[1], g))
}

const CONFIGS: usize = 1000;

fn point_jacobian_excess(rng: &mut CounterRng, additional: bool) -> f64 {
    let residual = if additional { additional_point_to_plane_residual } else { point_to_plane_residual };
    let (xb, xe) = (random_state(rng, 0.0), random_state(rng, 0.1));
    let p = rv(rng, 5.0);
    let t = rng.uniform_in(0.0, 0.1);
    let plane = random_plane(rng);
    let w = rng.uniform_in(0.2, 1.0);
    let r = residual(&p, t, &xb, &xe, &plane, w).unwrap();
    let f = |b: &State, e: &State| SMatrix::<f64, 1, 1>::new(residual(&p, t, b, e, &plane, w).unwrap().value);
    let nb = numeric(&xb, |b| f(b, &xe));
    let ne = numeric(&xe, |e| f(&xb, e));
    excess(&r.jac_begin, &nb).max(excess(&r.jac_end, &ne))
}

fn imu_jacobian_excess(rng: &mut CounterRng, g: &Vec3) -> f64 {
    let samples = random_samples(rng, 0.0, 11);
    let x0 = random_state(rng, 0.0);
    let p = Preintegration::integrate(&samples, x0.accel_bias + rv(rng, 0.01), x0.gyro_bias + rv(rng, 0.001), NoiseParams::default()).unwrap();
    let mut delta = Vec15::zeros();
    for k in 0..15 {
        delta[k] = rng.gaussian() * 0.05;
    }
    let mut x1 = propagate(&x0, &samples, g).retract(&delta);
    x1.timestamp = p.t_end;
    let r = imu_residual(&x0, &x1, &p, g).unwrap();
    let n0 = numeric(&x0, |a| imu_residual(a, &x1, &p, g).unwrap().value);
    let n1 = numeric(&x1, |b| imu_residual(&x0, b, &p, g).unwrap().value);
    excess(&r.jac_from, &n0).max(excess(&r.jac_to, &n1))
}

fn consistency_jacobian_excess(rng: &mut CounterRng) -> f64 {
    let anchor = random_state(rng, 0.0);
    let mut delta = Vec15::zeros();
    for k in 0..15 {
        delta[k] = rng.gaussian() * 0.3;
    }
    let xb = anchor.retract(&delta);
    let r = consistency_residual(&xb, &anchor);
    let n = numeric(&xb, |x| consistency_residual(x, &anchor).value);
    excess(&r.jacobian, &n)
}

/// Bias Jacobian of the relative motion against re-integration at shifted biases.
fn bias_jacobian_excess(rng: &mut CounterRng) -> f64 {
    let samples = random_samples(rng, 0.0, 11);
    let (ba, bw) = (rv(rng, 0.05), rv(rng, 0.01));
    let p = Preintegration::integrate(&samples, ba, bw, NoiseParams::default()).unwrap();
    let motion = |da: Vec3, dw: Vec3| {
        let q = Preintegration::integrate(&samples, ba + da, bw + dw, NoiseParams::default()).unwrap();
        let theta = log_so3(&(p.gamma.inverse() * q.gamma));
        SMatrix::<f64, 9, 1>::from_iterator(q.alpha.iter().chain(q.beta.iter()).chain(theta.iter()).copied())
    };
    let mut n = SMatrix::<f64, 9, 6>::zeros();
    for k in 0..6 {
        let mut d = Vec3::zeros();
        d[k % 3] = FD_STEP;
        let col = if k < 3 { motion(d, Vec3::zeros()) - motion(-d, Vec3::zeros()) } else { motion(Vec3::zeros(), d) - motion(Vec3::zeros(), -d) };
        n.set_column(k, &(col / (2.0 * FD_STEP)));
    }
    let analytic: SMatrix<f64, 9, 6> = p.jacobian.fixed_view::<9, 6>(pidx::ALPHA, pidx::BA).into_owned();
    excess(&analytic, &n)
}

#[test]
fn criterion_04_analytic_jacobians_match_finite_differences() {
    let _guard = serial();
    let start = Instant::now();
    let g = Vec3::new(0.0, 0.0, G);
    let mut rng = CounterRng::new(4, 0);
    let suites: [(&str, Box<dyn FnMut(&mut CounterRng) -> f64>); 5] = [
        ("point-to-plane", Box::new(|r| point_jacobian_excess(r, false))),
        ("whole-window point-to-plane", Box::new(|r| point_jacobian_excess(r, true))),
        ("relative motion", Box::new(|r| imu_jacobian_excess(r, &g))),
        ("consistency", Box::new(consistency_jacobian_excess)),
        ("pre-integration bias", Box::new(bias_jacobian_excess)),
    ];
    let mut all_ok = true;
    let mut details = Vec::new();
    for (name, mut suite) in suites {
        let worst = (0..CONFIGS).map(|_| suite(&mut rng)).fold(0.0, f64::max);
        all_ok &= worst <= 1.0;
        details.push(format!("{name} {worst:.3}"));
    }
    let timely = within("criterion 4 runtime", start.elapsed(), Duration::from_secs(30));
    verdict(
        "criterion 4 (Jacobians vs central differences)",
        all_ok && timely,
        &format!("{CONFIGS} configurations each, worst gap over allowance: {}", details.join(", ")),
    );
    assert!(all_ok, "{details:?}");
    assert!(timely);
}

#[test]
fn criterion_05_short_windows_are_more_certain() {
    let _guard = serial();
    let start = Instant::now();
    let sc = Scenario::preset("corridor_noisy", 5).unwrap();
    let samples = sc.imu_samples(&sc.validate().unwrap());
    let noise = sc.pipeline_config(PathBuf::new(), PathBuf::new()).noise;
    let mut rng = CounterRng::new(5, 0);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let t0 = rng.uniform_in(0.0, 32.0);
        let short = preintegrate(&samples, t0, t0 + 0.033, Vec3::zeros(), Vec3::zeros(), noise).unwrap();
        let long = preintegrate(&samples, t0, t0 + 0.1, Vec3::zeros(), Vec3::zeros(), noise).unwrap();
        worst = worst.max(short.covariance.trace() / long.covariance.trace());
    }
    let ok = worst < 1.0;
    let timely = within("criterion 5 runtime", start.elapsed(), Duration::from_secs(5));
    verdict("criterion 5 (33 ms vs 100 ms covariance)", ok && timely, &format!("largest trace ratio {worst:.3} over 100 windows"));
    assert!(ok, "{worst}");
    assert!(timely);
}

#[test]
fn criterion_06_residual_zero_points() {
    let _guard = serial();
    let samples = noiseless_imu("figure_eight");
    let g = Vec3::new(0.0, 0.0, G);
    let mut rng = CounterRng::new(6, 0);
    let mut worst_imu = 0.0_f64;
    let mut consistency_exact = true;
    for _ in 0..200 {
        let t0 = rng.uniform_in(0.0, 29.0);
        let t1 = t0 + 0.033;
        let x0 = random_state(&mut rng, t0);
        let mut x1 = propagate(&x0, &window_samples(&samples, t0, t1).unwrap(), &g);
        x1.timestamp = t1;
        let p = preintegrate(&samples, t0, t1, x0.accel_bias, x0.gyro_bias, NoiseParams::default()).unwrap();
        worst_imu = worst_imu.max(imu_residual(&x0, &x1, &p, &g).unwrap().value.amax());
        consistency_exact &= consistency_residual(&x0, &x0).value.iter().all(|&v| v == 0.0);
    }
    let ok = worst_imu < 1e-8 && consistency_exact;
    verdict(
        "criterion 6 (residuals vanish at exact states)",
        ok,
        &format!("largest relative-motion residual {worst_imu:.2e}, consistency exactly zero: {consistency_exact}"),
    );
    assert!(ok);
}

fn run_scenario(sc: &Scenario, adjust: impl FnOnce(&mut PipelineConfig)) -> (SimulatedRun, RunOutput) {
    let run = sc.generate().unwrap();
    let mut cfg = sc.pipeline_config(PathBuf::new(), PathBuf::new());
    adjust(&mut cfg);
    let out = run_packets(&cfg, run.imu.clone(), run.sweeps.iter().cloned().map(Ok));
    assert!(out.error.is_none(), "{:?}", out.error);
    (run, out)
}

#[test]
fn criterion_07_corridor_accuracy() {
    let _guard = serial();
    let start = Instant::now();
    let mut results = Vec::new();
    for (preset, bound) in [("corridor", 0.05), ("corridor_noisy", 0.5)] {
        let sc = Scenario::preset(preset, 7).unwrap();
        let (run, out) = run_scenario(&sc, |_| {});
        let ate = eval_ate(&out.trajectory(), &run.ground_truth, DEFAULT_MATCH_WINDOW).unwrap().ate;
        results.push((preset, ate, bound, out.states.last().unwrap().timestamp));
    }
    let accurate = results.iter().all(|(_, ate, bound, _)| ate < bound);
    let timely = within("criterion 7 runtime", start.elapsed(), Duration::from_secs(120));
    let detail: Vec<String> = results
        .iter()
        .map(|(p, ate, bound, t)| format!("{p} ATE {ate:.4} m over {t:.1} s (bound {bound})"))
        .collect();
    verdict("criterion 7 (corridor trajectory error)", accurate && timely, &detail.join(", "));
    assert!(accurate, "{detail:?}");
    assert!(timely);
}

fn vertical_velocity_variance(states: &[State]) -> f64 {
    let n = states.len() as f64;
    let mean = states.iter().map(|s| s.velocity.z).sum::<f64>() / n;
    states.iter().map(|s| (s.velocity.z - mean).powi(2)).sum::<f64>() / n
}

#[test]
fn criterion_08_first_segment_imu_block_reduces_vertical_drift() {
    let _guard = serial();
    let mut details = Vec::new();
    let mut ok = true;
    for seed in 1..=5 {
        let mut sc = Scenario::preset("corridor_noisy", seed).unwrap();
        sc.trajectory.duration = 6.0;
        let (_, full) = run_scenario(&sc, |_| {});
        let (_, ablated) = run_scenario(&sc, |c| c.solver.residuals.first_segment_imu = false);
        let (vf, va) = (vertical_velocity_variance(&full.states), vertical_velocity_variance(&ablated.states));
        ok &= va >= vf;
        details.push(format!("seed {seed}: {vf:.2e} vs {va:.2e}"));
    }
    verdict("criterion 8 (z-velocity variance, full vs without first IMU block)", ok, &details.join(", "));
    assert!(ok, "{details:?}");
}

fn world_points(run: &SimulatedRun, cfg: &PipelineConfig, points: &[TimedPoint]) -> Vec<Vec3> {
    points
        .iter()
        .map(|p| run.trajectory.at(p.timestamp).pose().transform_point(&cfg.lidar_to_imu.transform_point(&p.position)))
        .collect()
}

#[test]
fn criterion_09_map_updates_once_per_raw_sweep() {
    let _guard = serial();
    let mut sc = Scenario::preset("corridor", 9).unwrap();
    sc.trajectory.duration = 4.0;
    let run = sc.generate().unwrap();
    let cfg = sc.pipeline_config(PathBuf::new(), PathBuf::new());

    let mut reconstructed = VoxelMap::new(MapConfig::default());
    let mut event_times = Vec::new();
    let mut outputs = 0;
    let mut rec = PacketReconstructor::new(cfg.downsample_voxel, cfg.gap_tolerance);
    for sweep in &run.sweeps {
        for r in rec.push(sweep).unwrap() {
            outputs += 1;
            let before = reconstructed.insertion_events();
            reconstructed.insert_sweep(&world_points(&run, &cfg, &r.points().map(|(_, p)| *p).collect::<Vec<_>>()), r.t_end);
            if reconstructed.insertion_events() > before {
                event_times.push(r.t_end);
            }
        }
    }

    let mut raw = VoxelMap::new(MapConfig::default());
    for sweep in &run.sweeps {
        raw.insert_points(&world_points(&run, &cfg, &downsample(sweep.points(), cfg.downsample_voxel).unwrap()));
    }

    let rate_ok = event_times.len() == run.sweeps.len()
        && event_times.windows(2).all(|w| (w[1] - w[0] - 1.0 / sc.sensors.lidar.rev_rate).abs() < 1e-9);
    let same = reconstructed.sorted_points() == raw.sorted_points();
    verdict(
        "criterion 9 (map insertion at the raw sweep rate)",
        rate_ok && same,
        &format!(
            "{outputs} reconstructed sweeps, {} insertion events for {} raw sweeps, identical point sets: {same}",
            event_times.len(),
            run.sweeps.len()
        ),
    );
    assert!(rate_ok, "{event_times:?}");
    assert!(same);
}

#[test]
fn criterion_10_initialization_recovers_biases() {
    let _guard = serial();

    // Static: accelerometer scaled by 1.01 at rest.
    let trials = 100;
    let (sigma_a, sigma_w) = (0.01, 0.002);
    let gyro_bias = Vec3::new(0.01, -0.02, 0.005);
    let n_samples = 101;
    let accel_bound = 3.0 * sigma_a / (n_samples as f64).sqrt();
    let gyro_bound = 3.0 * sigma_w / (n_samples as f64).sqrt();
    let mut rng = CounterRng::new(10, 0);
    let mut static_ok = true;
    let mut worst_accel = 0.0_f64;
    let mut worst_gyro = 0.0_f64;
    let mut norms = Vec::with_capacity(trials);
    for _ in 0..trials {
        let samples: Vec<ImuSample> = (0..n_samples)
            .map(|k| {
                ImuSample::new(
                    k as f64 * 0.01,
                    Vec3::new(0.0, 0.0, G * 1.01) + rv(&mut rng, sigma_a),
                    gyro_bias + rv(&mut rng, sigma_w),
                )
            })
            .collect();
        let init = static_init(&samples, G, 1.0).unwrap();
        let accel_err = (init.accel_bias.norm() - 0.01 * G).abs();
        let gyro_err = (init.gyro_bias - gyro_bias).amax();
        worst_accel = worst_accel.max(accel_err);
        worst_gyro = worst_gyro.max(gyro_err);
        static_ok &= accel_err <= accel_bound && gyro_err <= gyro_bound;
        norms.push(init.accel_bias.norm());
    }
    let mean = norms.iter().sum::<f64>() / trials as f64;
    static_ok &= (mean - 0.01 * G).abs() <= accel_bound / (trials as f64).sqrt();

    // Motion: true poses at bootstrap boundaries, planted gyroscope bias.
    let true_bias = Vec3::new(0.02, 0.0, 0.0);
    let mut sc = Scenario::preset("figure_eight", 10).unwrap();
    sc.sensors.imu.gyro_bias = [true_bias.x, true_bias.y, true_bias.z];
    let traj = sc.validate().unwrap();
    let samples = sc.imu_samples(&traj);
    let states: Vec<State> = (0..=20)
        .map(|k| {
            let t = 0.1 * k as f64;
            let kin = traj.at(t);
            State {
                timestamp: t,
                translation: kin.position,
                rotation: kin.rotation,
                velocity: Vec3::zeros(),
                accel_bias: Vec3::zeros(),
                gyro_bias: Vec3::zeros(),
            }
        })
        .collect();
    let mut preints: Vec<Preintegration> = states
        .windows(2)
        .map(|w| preintegrate(&samples, w[0].timestamp, w[1].timestamp, Vec3::zeros(), Vec3::zeros(), NoiseParams::default()).unwrap())
        .collect();
    let rotations: Vec<_> = states.iter().map(|s| s.rotation).collect();
    let bias = init_gyro_bias_motion(&rotations, &mut preints).unwrap();
    let init = init_velocity_gravity(&states, &preints, bias, G).unwrap();
    let bias_err = (bias - true_bias).norm();
    let vel_err = states
        .iter()
        .zip(&init.velocities)
        .map(|(s, v)| (traj.at(s.timestamp).velocity - v).norm())
        .fold(0.0, f64::max);
    let gravity_err = (init.gravity_w - Vec3::new(0.0, 0.0, G)).norm();
    let motion_ok = bias_err < 1e-4 && vel_err < 1e-2;

    verdict(
        "criterion 10 (initialization)",
        static_ok && motion_ok,
        &format!(
            "static: worst |ba| error {worst_accel:.2e} (bound {accel_bound:.2e}), worst bw error {worst_gyro:.2e} (bound {gyro_bound:.2e}), mean |ba| {mean:.5}; \
             motion: bw error {bias_err:.2e}, worst velocity error {vel_err:.2e}, gravity error {gravity_err:.2e}"
        ),
    );
    assert!(static_ok);
    assert!(motion_ok);
}
