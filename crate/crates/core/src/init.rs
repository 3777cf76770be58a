//! Gravity, bias and velocity initialization.
//!
//! Static initialization averages a stationary IMU window. Motion
//! initialization tracks the first reconstructed sweeps with LiDAR-only
//! registration, aligns the pre-integrated rotations with the tracked ones to
//! recover the gyroscope bias, then solves a linear system for per-pose
//! velocities and gravity and finally constrains gravity to its known norm.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::geometry::{Extrinsics, Mat3, Quat, State, Vec3, exp_so3, log_so3};
use crate::imu::{ImuError, ImuSample, NoiseParams, Preintegration, pidx, preintegrate};
use crate::map::{MapConfig, VoxelMap};
use crate::optimizer::{
    OptWindow, SolverConfig, SolverError, WindowPoint, associate, points_to_world, shift_window_constant_velocity,
    solve_window, window_points,
};
use crate::sweep::ReconstructedSweep;

/// Largest per-axis sample variance of a stationary accelerometer ((m/s²)²).
pub const STATIC_ACCEL_VARIANCE: f64 = 0.05 * 0.05;
/// Largest per-axis sample variance of a stationary gyroscope ((rad/s)²).
pub const STATIC_GYRO_VARIANCE: f64 = 0.01 * 0.01;
pub const DEFAULT_STATIC_WINDOW: f64 = 1.0;
pub const DEFAULT_BOOTSTRAP_SWEEPS: usize = 20;
/// Mean point-to-plane distance above which LiDAR-only tracking has diverged (m).
pub const DIVERGENCE_DISTANCE: f64 = 0.05;
/// Re-seeding passes of the bootstrap map.
pub const BOOTSTRAP_PASSES: usize = 3;

const GRAVITY_REFINEMENT_ROUNDS: usize = 4;

#[derive(Debug, Error)]
pub enum InitError {
    #[error("platform moved during static initialization (accel variance {accel_variance:.3e}, gyro variance {gyro_variance:.3e})")]
    NotStationary { accel_variance: f64, gyro_variance: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("LiDAR-only tracking diverged at sweep {sweep}: mean plane distance {distance:.4} m")]
    Diverged { sweep: usize, distance: f64 },
    #[error("gyroscope bias is unobservable from these rotations; use static initialization")]
    NoRotationExcitation,
    #[error("velocity and gravity system is rank deficient (rank {rank} of {required})")]
    RankDeficient { rank: usize, required: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Imu(#[from] ImuError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    /// Specific force of gravity in the world frame (points up).
    pub gravity_w: Vec3,
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
    /// One velocity per bootstrap pose; empty after static initialization.
    pub velocities: Vec<Vec3>,
    /// Fully populated states; a single state after static initialization.
    pub initial_states: Vec<State>,
}

/// Mean and per-axis sample variance. The mean is accumulated as offsets from
/// the first sample so constant input is reproduced exactly.
fn variance(v: &[Vec3]) -> (Vec3, Vec3) {
    let n = v.len() as f64;
    let mean = v[0] + v.iter().map(|x| x - v[0]).sum::<Vec3>() / n;
    let var = v.iter().map(|x| (x - mean).component_mul(&(x - mean))).sum::<Vec3>() / (n - 1.0).max(1.0);
    (mean, var)
}

/// Biases and gravity from the first `window` seconds of a stationary stream.
pub fn static_init(samples: &[ImuSample], gravity_magnitude: f64, window: f64) -> Result<InitResult, InitError> {
    let Some(first) = samples.first() else {
        return Err(InitError::InsufficientData("no IMU samples".into()));
    };
    let t0 = first.timestamp;
    let used: Vec<&ImuSample> = samples.iter().take_while(|s| s.timestamp <= t0 + window + 1e-9).collect();
    let span = used.last().map_or(0.0, |s| s.timestamp - t0);
    if used.len() < 2 || span < window - 1e-6 {
        return Err(InitError::InsufficientData(format!(
            "static window needs {window} s of IMU data, found {span} s"
        )));
    }
    let (mean_a, var_a) = variance(&used.iter().map(|s| s.accel).collect::<Vec<_>>());
    let (mean_w, var_w) = variance(&used.iter().map(|s| s.gyro).collect::<Vec<_>>());
    if var_a.max() > STATIC_ACCEL_VARIANCE || var_w.max() > STATIC_GYRO_VARIANCE {
        return Err(InitError::NotStationary {
            accel_variance: var_a.max(),
            gyro_variance: var_w.max(),
        });
    }
    if mean_a.norm() < 1e-9 {
        return Err(InitError::InsufficientData("accelerometer reads zero".into()));
    }
    let gravity_w = mean_a / mean_a.norm() * gravity_magnitude;
    let accel_bias = mean_a - gravity_w;
    let state = State {
        accel_bias,
        gyro_bias: mean_w,
        ..State::at_rest(t0)
    };
    Ok(InitResult {
        gravity_w,
        accel_bias,
        gyro_bias: mean_w,
        velocities: Vec::new(),
        initial_states: vec![state],
    })
}

/// Outcome of LiDAR-only tracking of the first reconstructed sweeps.
#[derive(Debug, Clone)]
pub struct Bootstrap {
    /// Final estimate at every segment boundary; sweep `k` spans boundaries `k..=k + 3`.
    pub states: Vec<State>,
    /// Last solved window.
    pub window: OptWindow,
    pub map: VoxelMap,
}

impl Bootstrap {
    /// States at the end of each tracked sweep.
    pub fn sweep_end_states(&self) -> &[State] {
        &self.states[3..]
    }
}

fn mean_plane_distance(window: &OptWindow, map: &VoxelMap, points: &[WindowPoint], cfg: &SolverConfig) -> f64 {
    let assoc = associate(window, map, points, cfg);
    if assoc.is_empty() {
        return f64::INFINITY;
    }
    let world = points_to_world(window, &assoc.iter().map(|a| a.point).collect::<Vec<_>>());
    world
        .iter()
        .zip(&assoc)
        .map(|(p, a)| a.plane.signed_distance(p).abs())
        .sum::<f64>()
        / assoc.len() as f64
}

fn tracking_pass(
    sweeps: &[ReconstructedSweep],
    extrinsics: &Extrinsics,
    solver: &SolverConfig,
    map_cfg: MapConfig,
    seed: [State; 4],
) -> Result<Bootstrap, InitError> {
    let mut map = VoxelMap::new(map_cfg);
    let mut window = OptWindow::new(seed, seed[0], None, Vec3::zeros())?;
    let first = window_points(&sweeps[0], extrinsics);
    map.insert_sweep(&points_to_world(&window, &first), sweeps[0].t_end);
    let mut states = seed.to_vec();
    for (k, sweep) in sweeps.iter().enumerate().skip(1) {
        let guess = shift_window_constant_velocity(&window, sweep.t_end)?;
        let points = window_points(sweep, extrinsics);
        let (solved, _) = solve_window(&guess, &map, &points, solver)?;
        let distance = mean_plane_distance(&solved, &map, &points, solver);
        if distance > DIVERGENCE_DISTANCE {
            return Err(InitError::Diverged { sweep: k, distance });
        }
        states.truncate(k);
        states.extend_from_slice(&solved.states);
        map.insert_sweep(&points_to_world(&solved, &points), sweep.t_end);
        window = solved;
    }
    Ok(Bootstrap { states, window, map })
}

/// Boundary states of the first sweep from `seed[0]` moving with the constant
/// twist tracked between `a` and `b`.
fn extrapolate_first_sweep(seed: &[State; 4], a: &State, b: &State) -> [State; 4] {
    let dt = b.timestamp - a.timestamp;
    let velocity = (b.translation - a.translation) / dt;
    let rate = log_so3(&(a.rotation.inverse() * b.rotation)) / dt;
    let origin = &seed[0];
    let t0 = origin.timestamp;
    seed.map(|s| s.timestamp).map(|t| State {
        timestamp: t,
        rotation: origin.rotation * exp_so3(&(rate * (t - t0))),
        translation: origin.translation + velocity * (t - t0),
        ..*origin
    })
}

/// LiDAR-only tracking of `sweeps` starting from the identity pose.
///
/// The first sweep seeds the map. Later passes deskew it with the motion
/// tracked over the second sweep.
pub fn lidar_only_bootstrap(
    sweeps: &[ReconstructedSweep],
    extrinsics: &Extrinsics,
    solver: &SolverConfig,
    map_cfg: MapConfig,
) -> Result<Bootstrap, InitError> {
    if sweeps.len() < 3 {
        return Err(InitError::InsufficientData(format!(
            "bootstrap needs at least 3 sweeps, got {}",
            sweeps.len()
        )));
    }
    let mut seed = sweeps[0].boundaries().map(State::at_rest);
    let mut result = tracking_pass(sweeps, extrinsics, solver, map_cfg, seed)?;
    for _ in 1..BOOTSTRAP_PASSES {
        let next = extrapolate_first_sweep(&seed, &result.states[3], &result.states[6]);
        let change = next
            .iter()
            .zip(&seed)
            .map(|(a, b)| (a.translation - b.translation).norm() + a.rotation.angle_to(&b.rotation))
            .fold(0.0, f64::max);
        if change < 1e-7 {
            break;
        }
        seed = next;
        result = tracking_pass(sweeps, extrinsics, solver, map_cfg, seed)?;
    }
    Ok(result)
}

/// `Σ ‖2·vec(γ⁻¹ ⊗ q_i⁻¹ ⊗ q_{i+1})‖²` with each `γ` re-integrated at its own bias.
pub fn rotation_alignment_cost(rotations: &[Quat], preints: &[Preintegration]) -> f64 {
    rotations
        .windows(2)
        .zip(preints)
        .map(|(q, p)| {
            let err = p.gamma.inverse() * q[0].inverse() * q[1];
            (2.0 * err.imag()).norm_squared()
        })
        .sum()
}

/// Gyroscope bias aligning pre-integrated with tracked rotations; the
/// pre-integrations are re-propagated about the result.
pub fn init_gyro_bias_motion(rotations: &[Quat], preints: &mut [Preintegration]) -> Result<Vec3, InitError> {
    if rotations.len() != preints.len() + 1 || preints.is_empty() {
        return Err(InitError::InsufficientData(format!(
            "{} rotations for {} pre-integrations",
            rotations.len(),
            preints.len()
        )));
    }
    let base = preints[0].lin_gyro_bias;
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for (q, p) in rotations.windows(2).zip(preints.iter()) {
        let (_, _, gamma) = p.corrected(&p.lin_accel_bias, &base);
        let jac = p.jacobian_block(pidx::THETA, pidx::BW);
        let target = log_so3(&(gamma.inverse() * q[0].inverse() * q[1]));
        a += jac.transpose() * jac;
        b += jac.transpose() * target;
    }
    let eig = SymmetricEigen::new(a);
    if eig.eigenvalues.min() < 1e-12 * eig.eigenvalues.max().max(1e-300) || eig.eigenvalues.max() <= 0.0 {
        return Err(InitError::NoRotationExcitation);
    }
    let delta = a.cholesky().ok_or(InitError::NoRotationExcitation)?.solve(&b);
    let bias = base + delta;
    for p in preints.iter_mut() {
        let ba = p.lin_accel_bias;
        p.repropagate(ba, bias);
    }
    Ok(bias)
}

fn tangent_basis(g: &Vec3) -> (Vec3, Vec3) {
    let n = g.normalize();
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let b1 = (helper - n * n.dot(&helper)).normalize();
    (b1, n.cross(&b1))
}

/// Stacked linear system over consecutive pose pairs. Columns are the
/// velocities followed by `gravity_cols` columns whose coefficients are the
/// gravity coefficient times `gravity_map`; `gravity_offset` is moved to the
/// right-hand side.
fn velocity_system(
    states: &[State],
    preints: &[Preintegration],
    gyro_bias: &Vec3,
    gravity_map: &nalgebra::DMatrix<f64>,
    gravity_offset: &Vec3,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = states.len();
    let gravity_cols = gravity_map.ncols();
    let mut a = DMatrix::zeros(6 * (n - 1), 3 * n + gravity_cols);
    let mut z = DVector::zeros(6 * (n - 1));
    for (i, p) in preints.iter().enumerate() {
        let (xi, xj) = (&states[i], &states[i + 1]);
        let dt = xj.timestamp - xi.timestamp;
        let (alpha, beta, _) = p.corrected(&p.lin_accel_bias, gyro_bias);
        let r = xi.rotation_matrix();
        let row = 6 * i;
        // R_i α = p_j − p_i − v_i Δt + ½ g Δt²
        let rhs_a = r * alpha - (xj.translation - xi.translation) - 0.5 * dt * dt * gravity_offset;
        // R_i β = v_j − v_i + g Δt
        let rhs_b = r * beta - dt * gravity_offset;
        for k in 0..3 {
            a[(row + k, 3 * i + k)] = -dt;
            a[(row + 3 + k, 3 * i + k)] = -1.0;
            a[(row + 3 + k, 3 * (i + 1) + k)] = 1.0;
            z[row + k] = rhs_a[k];
            z[row + 3 + k] = rhs_b[k];
        }
        for c in 0..gravity_cols {
            for k in 0..3 {
                a[(row + k, 3 * n + c)] = 0.5 * dt * dt * gravity_map[(k, c)];
                a[(row + 3 + k, 3 * n + c)] = dt * gravity_map[(k, c)];
            }
        }
    }
    (a, z)
}

fn solve_least_squares(a: DMatrix<f64>, z: &DVector<f64>) -> Result<DVector<f64>, InitError> {
    let cols = a.ncols();
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|s| **s > smax * 1e-10).count();
    if rank < cols {
        return Err(InitError::RankDeficient { rank, required: cols });
    }
    svd.solve(z, smax * 1e-12)
        .map_err(|_| InitError::RankDeficient { rank, required: cols })
}

/// Velocities and gravity from tracked poses and their pre-integrations, with
/// gravity then constrained to `gravity_magnitude`.
pub fn init_velocity_gravity(
    states: &[State],
    preints: &[Preintegration],
    gyro_bias: Vec3,
    gravity_magnitude: f64,
) -> Result<InitResult, InitError> {
    let n = states.len();
    if n < 2 || preints.len() + 1 != n {
        return Err(InitError::InsufficientData(format!("{n} poses for {} pre-integrations", preints.len())));
    }
    let (a, z) = velocity_system(states, preints, &gyro_bias, &DMatrix::identity(3, 3), &Vec3::zeros());
    let x = solve_least_squares(a, &z)?;
    let mut gravity = Vec3::new(x[3 * n], x[3 * n + 1], x[3 * n + 2]);
    if gravity.norm() < 1e-9 {
        return Err(InitError::RankDeficient { rank: 3 * n, required: 3 * n + 3 });
    }
    let mut solution = x;
    for _ in 0..GRAVITY_REFINEMENT_ROUNDS {
        let nominal = gravity.normalize() * gravity_magnitude;
        let (b1, b2) = tangent_basis(&nominal);
        let basis = DMatrix::from_columns(&[DVector::from_column_slice(b1.as_slice()), DVector::from_column_slice(b2.as_slice())]);
        let (a, z) = velocity_system(states, preints, &gyro_bias, &basis, &nominal);
        solution = solve_least_squares(a, &z)?;
        gravity = (nominal + b1 * solution[3 * n] + b2 * solution[3 * n + 1]).normalize() * gravity_magnitude;
    }
    let velocities: Vec<Vec3> = (0..n).map(|i| Vec3::new(solution[3 * i], solution[3 * i + 1], solution[3 * i + 2])).collect();
    let initial_states = states
        .iter()
        .zip(&velocities)
        .map(|(s, v)| State {
            velocity: *v,
            accel_bias: Vec3::zeros(),
            gyro_bias,
            ..*s
        })
        .collect();
    Ok(InitResult {
        gravity_w: gravity,
        accel_bias: Vec3::zeros(),
        gyro_bias,
        velocities,
        initial_states,
    })
}

/// Pre-integrations between consecutive states at zero bias.
pub fn bootstrap_preintegrations(
    states: &[State],
    samples: &[ImuSample],
    noise: NoiseParams,
) -> Result<Vec<Preintegration>, InitError> {
    states
        .windows(2)
        .map(|w| Ok(preintegrate(samples, w[0].timestamp, w[1].timestamp, Vec3::zeros(), Vec3::zeros(), noise)?))
        .collect()
}

/// Gyroscope bias, velocities and gravity from bootstrap tracking.
pub fn motion_init(
    bootstrap: &Bootstrap,
    samples: &[ImuSample],
    noise: NoiseParams,
    gravity_magnitude: f64,
) -> Result<InitResult, InitError> {
    let states = bootstrap.sweep_end_states();
    let mut preints = bootstrap_preintegrations(states, samples, noise)?;
    let rotations: Vec<Quat> = states.iter().map(|s| s.rotation).collect();
    let gyro_bias = init_gyro_bias_motion(&rotations, &mut preints)?;
    init_velocity_gravity(states, &preints, gyro_bias, gravity_magnitude)
}
