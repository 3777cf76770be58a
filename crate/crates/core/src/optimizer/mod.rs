//! Joint optimization of the four states bounding one reconstructed sweep.
//!
//! A window holds `x_b, x_e1, x_e2, x_e3` at the four segment boundaries of a
//! reconstructed sweep plus a fixed anchor: the previous window's solution at
//! `x_b`'s timestamp. Every point yields a residual on the two states bracketing
//! its segment and a second residual on `x_b`/`x_e3`; consecutive states are
//! linked by pre-integrated IMU residuals and `x_b` is pulled toward the anchor.

pub mod residuals;

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{idx, Extrinsics, GeometryError, State, Vec15, Vec3};
use crate::imu::{predict_states, preintegrate, ImuError, ImuSample, Mat15, NoiseParams, Preintegration};
use crate::map::{fit_plane, PlaneFit, VoxelMap, MIN_PLANE_POINTS};
use crate::sweep::ReconstructedSweep;

pub use residuals::{
    additional_point_to_plane_residual, consistency_residual, imu_residual, point_to_plane_residual, SegmentMotion,
    ConsistencyResidual, ImuResidual, PointResidual, ResidualError,
};

pub const NUM_STATES: usize = 4;
pub const NUM_PARAMS: usize = 15 * NUM_STATES;

pub type Hessian = SMatrix<f64, NUM_PARAMS, NUM_PARAMS>;
pub type Gradient = SVector<f64, NUM_PARAMS>;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("only {found} usable point associations, need {required}")]
    Degenerate { found: usize, required: usize },
    #[error("normal equations could not be solved at t = {}", window.states[0].timestamp)]
    SolveFailed { window: Box<OptWindow> },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Imu(#[from] ImuError),
}

/// How each point-to-plane residual is scaled before the robust kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// Planarity score of the fitted plane.
    Planarity,
    Constant,
}

/// Information matrix of the consistency block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyWeight {
    /// Identity.
    Unit,
    /// Unit on the pose; velocity and biases weighted by their marginal
    /// information from the previous window's solve.
    Posterior,
}

/// Which residual families enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualSet {
    pub imu: bool,
    /// IMU block of the first segment (`x_b` to `x_e1`); off for the ablation.
    pub first_segment_imu: bool,
    pub consistency: bool,
    /// Point residuals spanning the whole window.
    pub additional: bool,
}

impl Default for ResidualSet {
    fn default() -> Self {
        Self {
            imu: true,
            first_segment_imu: true,
            consistency: true,
            additional: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub registrations: usize,
    pub iterations: usize,
    pub huber_delta: f64,
    /// Point residual variance; residuals are weighted by its inverse.
    pub p_l: f64,
    pub tol: f64,
    pub min_points: usize,
    pub knn: usize,
    pub min_planarity: f64,
    /// Associations farther than this from their plane are dropped (m).
    pub max_plane_distance: f64,
    /// Planes whose neighbors stray farther than this from the fit are dropped (m).
    pub plane_thickness: f64,
    pub weight_mode: WeightMode,
    pub residuals: ResidualSet,
    /// Solve only translation and rotation, holding velocity and biases.
    pub pose_only: bool,
    pub consistency_weight: ConsistencyWeight,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            registrations: 5,
            iterations: 5,
            huber_delta: 0.3,
            p_l: 0.001,
            tol: 1e-4,
            min_points: 50,
            knn: 20,
            min_planarity: 0.5,
            max_plane_distance: 0.2,
            plane_thickness: 0.05,
            weight_mode: WeightMode::Planarity,
            residuals: ResidualSet::default(),
            pose_only: false,
            consistency_weight: ConsistencyWeight::Posterior,
        }
    }
}

impl SolverConfig {
    /// Point-to-plane registration only, as used before IMU initialization.
    pub fn lidar_only() -> Self {
        Self {
            residuals: ResidualSet {
                imu: false,
                first_segment_imu: false,
                consistency: true,
                additional: true,
            },
            pose_only: true,
            ..Self::default()
        }
    }
}

/// Four states of one reconstructed sweep and the fixed anchor before it.
#[derive(Debug, Clone, PartialEq)]
pub struct OptWindow {
    /// `x_b, x_e1, x_e2, x_e3` in time order.
    pub states: [State; NUM_STATES],
    /// Previous solution at `states[0].timestamp`; never modified.
    pub anchor: State,
    /// Pre-integrations over the three segments, if IMU data is in use.
    pub preints: Option<[Preintegration; 3]>,
    pub gravity_w: Vec3,
    /// Information of the consistency block; identity when absent.
    pub anchor_information: Option<Mat15>,
    /// Marginal information of `states[1]` after a solve, handed to the next window.
    pub second_state_information: Option<Mat15>,
}

impl OptWindow {
    pub fn new(
        states: [State; NUM_STATES],
        anchor: State,
        preints: Option<[Preintegration; 3]>,
        gravity_w: Vec3,
    ) -> Result<Self, SolverError> {
        let w = Self {
            states,
            anchor,
            preints,
            gravity_w,
            anchor_information: None,
            second_state_information: None,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidWindow(m));
        for k in 0..3 {
            if !(self.states[k + 1].timestamp > self.states[k].timestamp) {
                return bad(format!("state timestamps not increasing at slot {k}"));
            }
        }
        if (self.anchor.timestamp - self.states[0].timestamp).abs() > 1e-9 {
            return bad(format!(
                "anchor at {} but first state at {}",
                self.anchor.timestamp, self.states[0].timestamp
            ));
        }
        if let Some(p) = &self.preints {
            for (k, pre) in p.iter().enumerate() {
                if (pre.t_start - self.states[k].timestamp).abs() > 1e-6
                    || (pre.t_end - self.states[k + 1].timestamp).abs() > 1e-6
                {
                    return bad(format!("pre-integration {k} does not span its segment"));
                }
            }
        }
        Ok(())
    }

    pub fn with_anchor_information(mut self, information: Option<Mat15>) -> Self {
        self.anchor_information = information;
        self
    }

    pub fn timestamps(&self) -> [f64; NUM_STATES] {
        self.states.map(|s| s.timestamp)
    }

    fn retract(&self, delta: &Gradient) -> Self {
        let mut out = self.clone();
        for (k, s) in out.states.iter_mut().enumerate() {
            let d: Vec15 = delta.fixed_rows::<15>(15 * k).into_owned();
            *s = s.retract(&d);
        }
        out
    }
}

/// A sweep point moved into the body frame and tagged with its segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowPoint {
    /// Segment slot 0..3; the point lies between `states[slot]` and `states[slot + 1]`.
    pub slot: usize,
    pub timestamp: f64,
    pub body: Vec3,
}

/// Converts a reconstructed sweep's LiDAR-frame points to body-frame window points.
pub fn window_points(sweep: &ReconstructedSweep, extrinsics: &Extrinsics) -> Vec<WindowPoint> {
    sweep
        .points()
        .map(|(slot, p)| WindowPoint {
            slot,
            timestamp: p.timestamp,
            body: extrinsics.to_body(&p.position),
        })
        .collect()
}

/// A point paired with the plane it was matched to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Association {
    pub point: WindowPoint,
    pub plane: PlaneFit,
    pub weight: f64,
}

/// Matches every point against the map at the current state estimates.
pub fn associate(window: &OptWindow, map: &VoxelMap, points: &[WindowPoint], cfg: &SolverConfig) -> Vec<Association> {
    let s = &window.states;
    let segments = [0, 1, 2].map(|k| SegmentMotion::new(&s[k], &s[k + 1]));
    let matched: Vec<Option<Association>> = points
        .par_iter()
        .map(|wp| {
            let world = segments[wp.slot].transform(&wp.body, wp.timestamp).ok()?;
            let neighbors = map.nearest_neighbors(&world, cfg.knn);
            if neighbors.len() < MIN_PLANE_POINTS {
                return None;
            }
            let pts: Vec<Vec3> = neighbors.iter().map(|n| n.point).collect();
            let plane = fit_plane(&pts, cfg.min_planarity).ok()?;
            if pts.iter().any(|q| plane.signed_distance(q).abs() > cfg.plane_thickness) {
                return None;
            }
            if plane.signed_distance(&world).abs() > cfg.max_plane_distance {
                return None;
            }
            let weight = match cfg.weight_mode {
                WeightMode::Planarity => plane.planarity,
                WeightMode::Constant => 1.0,
            };
            Some(Association {
                point: *wp,
                plane,
                weight,
            })
        })
        .collect();
    matched.into_iter().flatten().collect()
}

/// Huber loss of a scalar residual and its IRLS weight.
pub fn huber(r: f64, delta: f64) -> (f64, f64) {
    let a = r.abs();
    if a <= delta {
        (r * r, 1.0)
    } else {
        (2.0 * delta * a - delta * delta, delta / a)
    }
}

/// Adds `w·JᵀJ` and `w·Jᵀr` for a scalar residual touching the pose columns of two states.
fn accumulate_point(h: &mut Hessian, g: &mut Gradient, r: &PointResidual, sa: usize, sb: usize, w: f64) {
    let mut cols = [0usize; 12];
    let mut vals = [0.0; 12];
    for k in 0..6 {
        cols[k] = 15 * sa + k;
        vals[k] = r.jac_begin[k];
        cols[6 + k] = 15 * sb + k;
        vals[6 + k] = r.jac_end[k];
    }
    for i in 0..12 {
        g[cols[i]] += w * vals[i] * r.value;
        for j in 0..12 {
            h[(cols[i], cols[j])] += w * vals[i] * vals[j];
        }
    }
}

fn add_block(h: &mut Hessian, g: &mut Gradient, jacs: &[(usize, &Mat15)], info: &Mat15, r: &Vec15) {
    for &(a, ja) in jacs {
        let ja_t_info = ja.transpose() * info;
        let mut ga = g.fixed_rows_mut::<15>(15 * a);
        ga += ja_t_info * r;
        for &(b, jb) in jacs {
            let mut hab = h.fixed_view_mut::<15, 15>(15 * a, 15 * b);
            hab += ja_t_info * jb;
        }
    }
}

fn imu_information(p: &Preintegration) -> Mat15 {
    let cov = p.covariance + Mat15::identity() * 1e-15;
    cov.cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| cov.pseudo_inverse(1e-18).unwrap_or_else(|_| Mat15::zeros()))
}

/// Normal equations `H δ = −g` at the window's current estimate, with the
/// objective value. Associations are held fixed.
pub fn assemble_normal_equations(
    window: &OptWindow,
    associations: &[Association],
    cfg: &SolverConfig,
) -> Result<(Hessian, Gradient, f64), SolverError> {
    let mut h = Hessian::zeros();
    let mut g = Gradient::zeros();
    let cost = accumulate(window, associations, cfg, Some((&mut h, &mut g)))?;
    Ok((h, g, cost))
}

/// Objective of the window under fixed associations.
pub fn objective(window: &OptWindow, associations: &[Association], cfg: &SolverConfig) -> Result<f64, SolverError> {
    accumulate(window, associations, cfg, None)
}

fn accumulate(
    window: &OptWindow,
    associations: &[Association],
    cfg: &SolverConfig,
    mut normal: Option<(&mut Hessian, &mut Gradient)>,
) -> Result<f64, SolverError> {
    let s = &window.states;
    let point_info = 1.0 / cfg.p_l;
    let segments = [0, 1, 2].map(|k| SegmentMotion::new(&s[k], &s[k + 1]));
    let whole = SegmentMotion::new(&s[0], &s[3]);
    let mut cost = 0.0;
    for a in associations {
        let p = &a.point;
        let blocks = [
            Some((p.slot, p.slot + 1, &segments[p.slot])),
            cfg.residuals.additional.then_some((0, 3, &whole)),
        ];
        for (sa, sb, motion) in blocks.into_iter().flatten() {
            match normal.as_mut() {
                Some((h, g)) => {
                    let r = motion.residual(&p.body, p.timestamp, &a.plane, a.weight)?;
                    // The kernel acts on the whitened residual.
                    let (loss, w) = huber(r.value * point_info.sqrt(), cfg.huber_delta);
                    cost += loss;
                    accumulate_point(h, g, &r, sa, sb, point_info * w);
                }
                None => {
                    let value = motion.value(&p.body, p.timestamp, &a.plane, a.weight)?;
                    cost += huber(value * point_info.sqrt(), cfg.huber_delta).0;
                }
            }
        }
    }
    if cfg.residuals.imu {
        if let Some(preints) = &window.preints {
            for (k, p) in preints.iter().enumerate() {
                if k == 0 && !cfg.residuals.first_segment_imu {
                    continue;
                }
                let r = imu_residual(&s[k], &s[k + 1], p, &window.gravity_w)?;
                let info = imu_information(p);
                cost += (r.value.transpose() * info * r.value)[0];
                if let Some((h, g)) = normal.as_mut() {
                    add_block(h, g, &[(k, &r.jac_from), (k + 1, &r.jac_to)], &info, &r.value);
                }
            }
        }
    }
    if cfg.residuals.consistency {
        let r = consistency_residual(&s[0], &window.anchor);
        let info = if cfg.pose_only {
            // Velocity and bias rows are constant when those states are held.
            let mut m = Mat15::zeros();
            for i in 0..6 {
                m[(i, i)] = 1.0;
            }
            m
        } else {
            window.anchor_information.unwrap_or_else(Mat15::identity)
        };
        cost += (r.value.transpose() * info * r.value)[0];
        if let Some((h, g)) = normal.as_mut() {
            add_block(h, g, &[(0, &r.jacobian)], &info, &r.value);
        }
    }
    Ok(cost)
}

/// Diagnostics of one [`solve_window`] call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    pub registrations: usize,
    pub iterations: usize,
    pub associations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Objective after every accepted step, per registration.
    pub accepted_costs: Vec<Vec<f64>>,
    /// Pose-part norm of every accepted update.
    pub step_norms: Vec<f64>,
    pub converged: bool,
    pub final_damping: f64,
}

fn free_mask(cfg: &SolverConfig) -> [bool; NUM_PARAMS] {
    let mut mask = [true; NUM_PARAMS];
    if cfg.pose_only {
        for (i, m) in mask.iter_mut().enumerate() {
            *m = i % 15 < idx::VEL;
        }
    }
    mask
}

fn damped_step(h: &Hessian, g: &Gradient, lambda: f64, mask: &[bool; NUM_PARAMS]) -> Option<Gradient> {
    let mut a = *h;
    let mut b = -g;
    for i in 0..NUM_PARAMS {
        if mask[i] {
            a[(i, i)] += lambda * h[(i, i)].max(1e-9);
        } else {
            for j in 0..NUM_PARAMS {
                a[(i, j)] = 0.0;
                a[(j, i)] = 0.0;
            }
            a[(i, i)] = 1.0;
            b[i] = 0.0;
        }
    }
    let x = a.cholesky()?.solve(&b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn pose_update_norm(delta: &Gradient) -> f64 {
    (0..NUM_STATES)
        .map(|k| delta.fixed_rows::<6>(15 * k).norm_squared())
        .sum::<f64>()
        .sqrt()
}

const MAX_DAMPING: f64 = 1e12;

/// Consistency information for the state in `slot`: unit on the pose and the
/// marginal information of velocity and biases with the other states marginalized.
pub fn marginal_information(window: &OptWindow, associations: &[Association], cfg: &SolverConfig, slot: usize) -> Option<Mat15> {
    let (h, _, _) = assemble_normal_equations(window, associations, cfg).ok()?;
    let cov = h.cholesky()?.inverse();
    let block: Mat15 = cov.fixed_view::<15, 15>(15 * slot, 15 * slot).into_owned();
    let full = block.cholesky()?.inverse();
    // Pose rows keep unit weight; overlapping windows share their point observations.
    let mut info = Mat15::identity();
    info.fixed_view_mut::<9, 9>(idx::VEL, idx::VEL)
        .copy_from(&full.fixed_view::<9, 9>(idx::VEL, idx::VEL));
    Some((info + info.transpose()) * 0.5)
}

/// Robustified Gauss-Newton with Levenberg damping over the 60 window parameters.
pub fn solve_window(
    window: &OptWindow,
    map: &VoxelMap,
    points: &[WindowPoint],
    cfg: &SolverConfig,
) -> Result<(OptWindow, SolveReport), SolverError> {
    window.validate()?;
    let mask = free_mask(cfg);
    let mut current = window.clone();
    let mut report = SolveReport::default();
    let mut lambda = 1e-4;
    let mut last_assoc = Vec::new();
    for registration in 0..cfg.registrations {
        let assoc = associate(&current, map, points, cfg);
        if assoc.len() < cfg.min_points {
            return Err(SolverError::Degenerate {
                found: assoc.len(),
                required: cfg.min_points,
            });
        }
        report.registrations = registration + 1;
        report.associations = assoc.len();
        last_assoc = assoc.clone();
        let mut costs = Vec::new();
        let mut first_step = f64::INFINITY;
        for iteration in 0..cfg.iterations {
            let (h, g, cost) = assemble_normal_equations(&current, &assoc, cfg)?;
            if registration == 0 && iteration == 0 {
                report.initial_cost = cost;
            }
            report.iterations += 1;
            let mut accepted = None;
            while lambda <= MAX_DAMPING {
                match damped_step(&h, &g, lambda, &mask) {
                    Some(delta) => {
                        let candidate = current.retract(&delta);
                        let new_cost = objective(&candidate, &assoc, cfg)?;
                        if new_cost <= cost {
                            lambda = (lambda / 10.0).max(1e-10);
                            accepted = Some((candidate, delta, new_cost));
                            break;
                        }
                        if pose_update_norm(&delta) < 1e-12 {
                            break;
                        }
                    }
                    None if lambda >= MAX_DAMPING / 10.0 => {
                        return Err(SolverError::SolveFailed {
                            window: Box::new(current),
                        });
                    }
                    None => {}
                }
                lambda *= 10.0;
            }
            let Some((candidate, delta, new_cost)) = accepted else {
                break;
            };
            current = candidate;
            costs.push(new_cost);
            let step = pose_update_norm(&delta);
            report.step_norms.push(step);
            if iteration == 0 {
                first_step = step;
            }
            if step < cfg.tol {
                break;
            }
        }
        report.accepted_costs.push(costs);
        if first_step < cfg.tol {
            report.converged = true;
            break;
        }
    }
    if let Some(preints) = current.preints.as_mut() {
        for (k, p) in preints.iter_mut().enumerate() {
            let s = &current.states[k];
            if (s.accel_bias - p.lin_accel_bias).norm() > 0.1 || (s.gyro_bias - p.lin_gyro_bias).norm() > 0.01 {
                p.repropagate(s.accel_bias, s.gyro_bias);
            }
        }
    }
    report.final_cost = objective(&current, &last_assoc, cfg).unwrap_or(f64::NAN);
    current.anchor_information = window.anchor_information;
    current.second_state_information = None;
    if cfg.consistency_weight == ConsistencyWeight::Posterior && !cfg.pose_only && current.preints.is_some() {
        current.second_state_information = marginal_information(&current, &last_assoc, cfg, 1);
    }
    report.final_damping = lambda;
    Ok((current, report))
}

/// Next window with IMU prediction: the anchor and `x_b` come from the
/// solved second state, the middle states carry over, and the newest state is
/// propagated through `samples` up to `t_end`.
pub fn shift_window(
    prev: &OptWindow,
    samples: &[ImuSample],
    t_end: f64,
    noise: NoiseParams,
) -> Result<OptWindow, SolverError> {
    let s = &prev.states;
    let (x_b, x_e3) = predict_states(&s[3], &s[1], samples, t_end, &prev.gravity_w)?;
    let new_preint = preintegrate(samples, s[3].timestamp, t_end, s[3].accel_bias, s[3].gyro_bias, noise)?;
    let preints = match &prev.preints {
        Some([_, p1, p2]) => Some([p1.clone(), p2.clone(), new_preint]),
        None => None,
    };
    Ok(OptWindow::new([x_b, s[2], s[3], x_e3], s[1], preints, prev.gravity_w)?
        .with_anchor_information(prev.second_state_information))
}

/// Next window without IMU: the newest state extrapolates the motion of the
/// last solved segment at constant velocity.
pub fn shift_window_constant_velocity(prev: &OptWindow, t_end: f64) -> Result<OptWindow, SolverError> {
    let s = &prev.states;
    let x_e3 = extrapolate(&s[2], &s[3], t_end);
    OptWindow::new([s[1], s[2], s[3], x_e3], s[1], None, prev.gravity_w)
}

/// State at `t` continuing the relative motion from `a` to `b`.
pub fn extrapolate(a: &State, b: &State, t: f64) -> State {
    let span = b.timestamp - a.timestamp;
    let f = if span > 0.0 { (t - b.timestamp) / span } else { 0.0 };
    let rel = crate::geometry::log_so3(&(a.rotation.inverse() * b.rotation));
    let velocity = if span > 0.0 { (b.translation - a.translation) / span } else { b.velocity };
    State {
        timestamp: t,
        translation: b.translation + (b.translation - a.translation) * f,
        rotation: b.rotation * crate::geometry::exp_so3(&(rel * f)),
        velocity,
        ..*b
    }
}

/// Interpolated body pose of every window point, used to move points to the world frame.
pub fn points_to_world(window: &OptWindow, points: &[WindowPoint]) -> Vec<Vec3> {
    points
        .iter()
        .filter_map(|p| {
            let x = crate::geometry::interpolate_state(&window.states[p.slot], &window.states[p.slot + 1], p.timestamp)
                .ok()?;
            Some(x.pose().transform_point(&p.body))
        })
        .collect()
}
