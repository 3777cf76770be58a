//! Sweep-by-sweep orchestration of reconstruction, initialization,
//! window optimization and map maintenance.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use super::config::{ConfigError, InitMode, PipelineConfig};
use super::eval::{AteError, AteResult, DEFAULT_MATCH_WINDOW, eval_ate};
use super::io::{self, IoError};
use crate::geometry::{Pose, State, Vec3, wxyz};
use crate::imu::{ImuError, ImuSample, preintegrate, predict_states};
use crate::init::{self, InitError, InitResult};
use crate::map::{MapError, VoxelMap};
use crate::optimizer::{
    OptWindow, SolveReport, SolverConfig, SolverError, points_to_world, shift_window, solve_window, window_points,
};
use crate::sweep::{PacketReconstructor, RawSweep, ReconstructedSweep, StreamReconstructor, SweepError, TimedPoint};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("at t = {t}: {source}")]
    Sweep { t: f64, source: SweepError },
    #[error("at t = {t}: {source}")]
    Init { t: f64, source: InitError },
    #[error("at t = {t}: {source}")]
    Solver { t: f64, source: SolverError },
    #[error("at t = {t}: {source}")]
    Imu { t: f64, source: ImuError },
    #[error("at t = {t}: sweep boundaries do not continue the previous window")]
    Discontinuity { t: f64 },
    #[error(transparent)]
    Ate(#[from] AteError),
    #[error("no usable data: {0}")]
    NoData(String),
}

impl PipelineError {
    /// Short machine-readable category.
    pub fn class(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Io(_) | PipelineError::Map(_) => "io",
            PipelineError::Sweep { .. } | PipelineError::Discontinuity { .. } => "sweep",
            PipelineError::Init { .. } => "init",
            PipelineError::Solver { .. } => "solver",
            PipelineError::Imu { .. } => "imu",
            PipelineError::Ate(_) => "eval",
            PipelineError::NoData(_) => "data",
        }
    }

    /// Timestamp at which processing failed, if any.
    pub fn timestamp(&self) -> Option<f64> {
        match self {
            PipelineError::Sweep { t, .. }
            | PipelineError::Init { t, .. }
            | PipelineError::Solver { t, .. }
            | PipelineError::Imu { t, .. }
            | PipelineError::Discontinuity { t } => Some(*t),
            _ => None,
        }
    }
}

/// Wall-clock cost of one reconstructed sweep (ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepTiming {
    pub index: usize,
    pub t_end: f64,
    pub reconstruction_ms: f64,
    pub optimization_ms: f64,
    pub map_ms: f64,
    pub total_ms: f64,
}

/// Deterministic solver diagnostics of one window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub index: usize,
    pub t_end: f64,
    pub points: usize,
    pub associations: usize,
    pub registrations: usize,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub map_inserted: bool,
}

impl SweepRecord {
    fn new(index: usize, sweep: &ReconstructedSweep, points: usize, report: &SolveReport, inserted: bool) -> Self {
        Self {
            index,
            t_end: sweep.t_end,
            points,
            associations: report.associations,
            registrations: report.registrations,
            iterations: report.iterations,
            initial_cost: report.initial_cost,
            final_cost: report.final_cost,
            converged: report.converged,
            map_inserted: inserted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitSummary {
    pub mode: &'static str,
    pub t: f64,
    pub gravity_w: [f64; 3],
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
}

/// Everything produced by a run, including a partial result on failure.
#[derive(Debug)]
pub struct RunOutput {
    /// Finalized body states at segment boundaries, in time order.
    pub states: Vec<State>,
    pub map: VoxelMap,
    pub init: Option<InitResult>,
    pub init_summary: Option<InitSummary>,
    pub records: Vec<SweepRecord>,
    pub timings: Vec<SweepTiming>,
    pub sweeps_seen: usize,
    /// Processing stopped because the IMU stream ended at this time.
    pub truncated_at: Option<f64>,
    pub error: Option<PipelineError>,
}

impl RunOutput {
    pub fn trajectory(&self) -> Vec<(f64, Pose)> {
        self.states.iter().map(|s| (s.timestamp, s.pose())).collect()
    }

    pub fn ate(&self, ground_truth: &[(f64, Pose)]) -> Result<AteResult, AteError> {
        eval_ate(&self.trajectory(), ground_truth, DEFAULT_MATCH_WINDOW)
    }
}

enum Phase {
    Start,
    Bootstrap(Vec<ReconstructedSweep>),
    /// Initialized states of the first boundaries of the next window.
    Initialized(Vec<State>),
    Tracking(Box<OptWindow>),
    Stopped,
}

/// Incremental pipeline fed one reconstructed sweep at a time.
pub struct Pipeline {
    cfg: PipelineConfig,
    imu: Vec<ImuSample>,
    phase: Phase,
    out: RunOutput,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, imu: Vec<ImuSample>) -> Self {
        let map = VoxelMap::new(cfg.map);
        Self {
            cfg,
            imu,
            phase: Phase::Start,
            out: RunOutput {
                states: Vec::new(),
                map,
                init: None,
                init_summary: None,
                records: Vec::new(),
                timings: Vec::new(),
                sweeps_seen: 0,
                truncated_at: None,
                error: None,
            },
        }
    }

    pub fn is_stopped(&self) -> bool {
        matches!(self.phase, Phase::Stopped)
    }

    fn lidar_only(&self) -> SolverConfig {
        SolverConfig {
            residuals: SolverConfig::lidar_only().residuals,
            pose_only: true,
            ..self.cfg.solver
        }
    }

    fn imu_end(&self) -> f64 {
        self.imu.last().map_or(f64::NEG_INFINITY, |s| s.timestamp)
    }

    /// Window over `sweep` whose first `known.len()` states are given and whose
    /// remaining states are propagated through the IMU readings.
    fn seeded_window(&self, known: &[State], sweep: &ReconstructedSweep, gravity_w: Vec3) -> Result<OptWindow, PipelineError> {
        let bounds = sweep.boundaries();
        let t = sweep.t_begin;
        let mut states = [known[0]; 4];
        for k in 0..4 {
            states[k] = if k < known.len() {
                known[k]
            } else {
                predict_states(&states[k - 1], &states[k - 1], &self.imu, bounds[k], &gravity_w)
                    .map_err(|source| PipelineError::Imu { t, source })?
                    .1
            };
        }
        let mut preints = Vec::with_capacity(3);
        for k in 0..3 {
            let s = &states[k];
            preints.push(
                preintegrate(&self.imu, bounds[k], bounds[k + 1], s.accel_bias, s.gyro_bias, self.cfg.noise)
                    .map_err(|source| PipelineError::Imu { t, source })?,
            );
        }
        let preints: [_; 3] = preints.try_into().expect("three segments");
        OptWindow::new(states, states[0], Some(preints), gravity_w).map_err(|source| PipelineError::Solver { t, source })
    }

    fn start_static(&mut self, sweep: ReconstructedSweep) -> Result<(), PipelineError> {
        let t = sweep.t_begin;
        let init = init::static_init(&self.imu, self.cfg.gravity_magnitude(), self.cfg.static_window)
            .map_err(|source| PipelineError::Init { t, source })?;
        let x0 = State {
            timestamp: sweep.t_begin,
            ..init.initial_states[0]
        };
        let window = self.seeded_window(&[x0], &sweep, init.gravity_w)?;
        let points = window_points(&sweep, &self.cfg.extrinsics());
        let map_start = Instant::now();
        self.out.map.insert_sweep(&points_to_world(&window, &points), sweep.t_end);
        self.out.timings.push(SweepTiming {
            index: 0,
            t_end: sweep.t_end,
            reconstruction_ms: 0.0,
            optimization_ms: 0.0,
            map_ms: ms(map_start.elapsed()),
            total_ms: ms(map_start.elapsed()),
        });
        self.out.init_summary = Some(InitSummary {
            mode: "static",
            t: sweep.t_begin,
            gravity_w: arr(&init.gravity_w),
            accel_bias: arr(&init.accel_bias),
            gyro_bias: arr(&init.gyro_bias),
        });
        self.out.init = Some(init);
        self.out.states.push(window.states[0]);
        self.phase = Phase::Tracking(Box::new(window));
        Ok(())
    }

    fn finish_bootstrap(&mut self, sweeps: Vec<ReconstructedSweep>) -> Result<(), PipelineError> {
        let t = sweeps.last().map_or(0.0, |s| s.t_end);
        let err = |source| PipelineError::Init { t, source };
        let boot =
            init::lidar_only_bootstrap(&sweeps, &self.cfg.extrinsics(), &self.lidar_only(), self.cfg.map).map_err(err)?;
        let init = init::motion_init(&boot, &self.imu, self.cfg.noise, self.cfg.gravity_magnitude()).map_err(err)?;
        let n = sweeps.len();
        // Boundaries before the first IMU window are final; the sweep-end
        // states carry the initialized velocities and biases.
        for j in 0..n {
            let s = if j >= 3 { init.initial_states[j - 3] } else { boot.states[j] };
            self.out.states.push(State {
                gyro_bias: init.gyro_bias,
                ..s
            });
        }
        let carry: Vec<State> = init.initial_states[n - 3..].to_vec();
        self.out.map = boot.map;
        self.out.init_summary = Some(InitSummary {
            mode: "motion",
            t,
            gravity_w: arr(&init.gravity_w),
            accel_bias: arr(&init.accel_bias),
            gyro_bias: arr(&init.gyro_bias),
        });
        self.out.init = Some(init);
        self.phase = Phase::Initialized(carry);
        Ok(())
    }

    fn track(&mut self, prev: &OptWindow, sweep: &ReconstructedSweep, reconstruction: Duration) -> Result<OptWindow, PipelineError> {
        let t = sweep.t_begin;
        let started = Instant::now();
        let bounds = sweep.boundaries();
        if (bounds[0] - prev.states[1].timestamp).abs() > 1e-6 {
            return Err(PipelineError::Discontinuity { t });
        }
        let window =
            shift_window(prev, &self.imu, sweep.t_end, self.cfg.noise).map_err(|source| PipelineError::Solver { t, source })?;
        let points = window_points(sweep, &self.cfg.extrinsics());
        let (solved, report) =
            solve_window(&window, &self.out.map, &points, &self.cfg.solver).map_err(|source| PipelineError::Solver { t, source })?;
        let optimized = Instant::now();
        let inserted = self.out.map.insert_sweep(&points_to_world(&solved, &points), sweep.t_end) > 0;
        if inserted {
            self.out.map.prune_far(&solved.states[3].translation, self.cfg.prune_radius);
        }
        let done = Instant::now();
        let index = self.out.sweeps_seen - 1;
        self.out.records.push(SweepRecord::new(index, sweep, points.len(), &report, inserted));
        self.out.timings.push(SweepTiming {
            index,
            t_end: sweep.t_end,
            reconstruction_ms: ms(reconstruction),
            optimization_ms: ms(optimized - started),
            map_ms: ms(done - optimized),
            total_ms: ms(reconstruction + (done - started)),
        });
        self.out.states.push(solved.states[0]);
        Ok(solved)
    }

    /// Consumes one reconstructed sweep. Returns `false` once the run has
    /// stopped; a failure is kept in the output.
    pub fn process(&mut self, sweep: ReconstructedSweep, reconstruction: Duration) -> bool {
        if self.is_stopped() {
            return false;
        }
        if sweep.t_end > self.imu_end() + 1e-9 {
            self.out.truncated_at = Some(self.imu_end());
            self.flush_window();
            self.phase = Phase::Stopped;
            return false;
        }
        self.out.sweeps_seen += 1;
        let result = match std::mem::replace(&mut self.phase, Phase::Stopped) {
            Phase::Start => match self.cfg.init_mode {
                InitMode::Static => self.start_static(sweep),
                InitMode::Motion => {
                    self.phase = Phase::Bootstrap(vec![sweep]);
                    self.maybe_finish_bootstrap()
                }
            },
            Phase::Bootstrap(mut sweeps) => {
                sweeps.push(sweep);
                self.phase = Phase::Bootstrap(sweeps);
                self.maybe_finish_bootstrap()
            }
            Phase::Initialized(carry) => {
                let gravity = self.out.init.as_ref().map(|i| i.gravity_w).unwrap_or_default();
                self.seeded_window(&carry, &sweep, gravity)
                    .and_then(|window| self.solve_first(window, &sweep, reconstruction))
            }
            Phase::Tracking(prev) => match self.track(&prev, &sweep, reconstruction) {
                Ok(next) => {
                    self.phase = Phase::Tracking(Box::new(next));
                    Ok(())
                }
                Err(e) => {
                    self.phase = Phase::Tracking(prev);
                    Err(e)
                }
            },
            Phase::Stopped => Ok(()),
        };
        match result {
            Ok(()) => true,
            Err(e) => {
                self.fail(e);
                false
            }
        }
    }

    /// Records a failure coming from outside the pipeline and stops it.
    pub fn fail(&mut self, e: PipelineError) {
        self.out.error = Some(e);
        self.flush_window();
        self.phase = Phase::Stopped;
    }

    fn solve_first(&mut self, window: OptWindow, sweep: &ReconstructedSweep, reconstruction: Duration) -> Result<(), PipelineError> {
        let t = sweep.t_begin;
        let started = Instant::now();
        let points = window_points(sweep, &self.cfg.extrinsics());
        let (solved, report) =
            solve_window(&window, &self.out.map, &points, &self.cfg.solver).map_err(|source| PipelineError::Solver { t, source })?;
        let optimized = Instant::now();
        let inserted = self.out.map.insert_sweep(&points_to_world(&solved, &points), sweep.t_end) > 0;
        let done = Instant::now();
        let index = self.out.sweeps_seen - 1;
        self.out.records.push(SweepRecord::new(index, sweep, points.len(), &report, inserted));
        self.out.timings.push(SweepTiming {
            index,
            t_end: sweep.t_end,
            reconstruction_ms: ms(reconstruction),
            optimization_ms: ms(optimized - started),
            map_ms: ms(done - optimized),
            total_ms: ms(reconstruction + (done - started)),
        });
        self.out.states.push(solved.states[0]);
        self.phase = Phase::Tracking(Box::new(solved));
        Ok(())
    }

    fn maybe_finish_bootstrap(&mut self) -> Result<(), PipelineError> {
        let Phase::Bootstrap(sweeps) = &mut self.phase else {
            return Ok(());
        };
        if sweeps.len() < self.cfg.bootstrap_sweeps {
            return Ok(());
        }
        let sweeps = std::mem::take(sweeps);
        self.finish_bootstrap(sweeps)
    }

    fn flush_window(&mut self) {
        if let Phase::Tracking(w) = &self.phase {
            let last = self.out.states.last().map_or(f64::NEG_INFINITY, |s| s.timestamp);
            for s in &w.states {
                if s.timestamp > last + 1e-9 {
                    self.out.states.push(*s);
                }
            }
        }
    }

    /// Emits the states of the last window and returns the run output.
    pub fn finish(mut self) -> RunOutput {
        if let Phase::Bootstrap(sweeps) = &self.phase {
            if self.out.error.is_none() && !sweeps.is_empty() && self.out.init.is_none() {
                self.out.error = Some(PipelineError::NoData(format!(
                    "stream ended after {} of {} bootstrap sweeps",
                    sweeps.len(),
                    self.cfg.bootstrap_sweeps
                )));
            }
        }
        self.flush_window();
        if self.out.sweeps_seen == 0 && self.out.error.is_none() {
            self.out.error = Some(PipelineError::NoData("no reconstructed sweeps".into()));
        }
        self.out
    }
}

/// Runs the pipeline over a point stream cut on the configured segment grid.
pub fn run_points<I>(cfg: &PipelineConfig, imu: Vec<ImuSample>, points: I) -> RunOutput
where
    I: IntoIterator<Item = Result<TimedPoint, PipelineError>>,
{
    let mut pipeline = Pipeline::new(cfg.clone(), imu);
    let mut rec = StreamReconstructor::new(cfg.segment_period(), cfg.downsample_voxel, cfg.gap_tolerance, None);
    let mut last = None;
    let mut clock = Instant::now();
    for point in points {
        let point = match point {
            Ok(p) => p,
            Err(e) => {
                pipeline.fail(e);
                return pipeline.finish();
            }
        };
        last = Some(point.timestamp);
        rec.push(point);
        if !drain(&mut rec, &mut pipeline, &mut clock, point.timestamp) {
            return pipeline.finish();
        }
    }
    if let Some(t) = last {
        rec.finish(t);
        drain(&mut rec, &mut pipeline, &mut clock, t);
    }
    pipeline.finish()
}

fn drain(rec: &mut StreamReconstructor, pipeline: &mut Pipeline, clock: &mut Instant, t: f64) -> bool {
    while let Some(next) = rec.pop() {
        let elapsed = clock.elapsed();
        match next {
            Ok(sweep) => {
                if !pipeline.process(sweep, elapsed) {
                    return false;
                }
            }
            Err(source) => {
                pipeline.fail(PipelineError::Sweep { t, source });
                return false;
            }
        }
        *clock = Instant::now();
    }
    true
}

/// Runs the pipeline over whole raw sweeps.
pub fn run_packets<I>(cfg: &PipelineConfig, imu: Vec<ImuSample>, sweeps: I) -> RunOutput
where
    I: IntoIterator<Item = Result<RawSweep, PipelineError>>,
{
    let mut pipeline = Pipeline::new(cfg.clone(), imu);
    let mut rec = PacketReconstructor::new(cfg.downsample_voxel, cfg.gap_tolerance);
    for raw in sweeps {
        let started = Instant::now();
        let raw = match raw {
            Ok(r) => r,
            Err(e) => {
                pipeline.fail(e);
                break;
            }
        };
        let out = match rec.push(&raw) {
            Ok(out) => out,
            Err(source) => {
                pipeline.fail(PipelineError::Sweep { t: raw.t_begin(), source });
                break;
            }
        };
        let per_sweep = started.elapsed() / out.len().max(1) as u32;
        if !out.into_iter().all(|s| pipeline.process(s, per_sweep)) {
            break;
        }
    }
    pipeline.finish()
}

/// Groups a time-ordered point stream into raw sweeps with the given boundaries.
fn packets<'a, P>(points: P, bounds: &'a [(u64, f64, f64)]) -> impl Iterator<Item = Result<RawSweep, PipelineError>> + 'a
where
    P: Iterator<Item = Result<TimedPoint, IoError>> + 'a,
{
    let mut points = points.peekable();
    bounds.iter().map(move |&(_, tb, te)| {
        let mut inside = Vec::new();
        while let Some(next) = points.peek() {
            match next {
                Ok(p) if p.timestamp < tb => {
                    points.next();
                }
                Ok(p) if p.timestamp < te || (p.timestamp == te && inside.is_empty()) => {
                    inside.push(*p);
                    points.next();
                }
                Ok(_) => break,
                Err(_) => return Err(PipelineError::Io(points.next().expect("peeked").expect_err("peeked error"))),
            }
        }
        RawSweep::new(inside, tb, te).map_err(|source| PipelineError::Sweep { t: tb, source })
    })
}

/// Runs the pipeline on the files named by the configuration.
pub fn run(cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let imu = io::read_imu(&cfg.imu)?;
    let points = io::point_rows(&cfg.points)?;
    Ok(match &cfg.sweeps {
        Some(path) => {
            let bounds = io::read_sweeps(path)?;
            run_packets(cfg, imu, packets(points, &bounds))
        }
        None => run_points(cfg, imu, points.map(|p| p.map_err(PipelineError::from))),
    })
}

#[derive(Debug, Serialize)]
struct ErrorReport {
    class: &'static str,
    message: String,
    t: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ResidualStats {
    mean_associations: f64,
    min_associations: usize,
    mean_final_cost_per_association: f64,
    converged_fraction: f64,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    sweeps_seen: usize,
    windows_solved: usize,
    states_written: usize,
    truncated_at: Option<f64>,
    init: Option<&'a InitSummary>,
    final_gyro_bias: Option<[f64; 3]>,
    final_accel_bias: Option<[f64; 3]>,
    map_points: usize,
    map_insertions: u64,
    residuals: Option<ResidualStats>,
    ate: Option<f64>,
    ate_matches: Option<usize>,
    error: Option<ErrorReport>,
    windows: &'a [SweepRecord],
}

fn residual_stats(records: &[SweepRecord]) -> Option<ResidualStats> {
    if records.is_empty() {
        return None;
    }
    let n = records.len() as f64;
    Some(ResidualStats {
        mean_associations: records.iter().map(|r| r.associations as f64).sum::<f64>() / n,
        min_associations: records.iter().map(|r| r.associations).min().unwrap_or(0),
        mean_final_cost_per_association: records
            .iter()
            .map(|r| r.final_cost / r.associations.max(1) as f64)
            .sum::<f64>()
            / n,
        converged_fraction: records.iter().filter(|r| r.converged).count() as f64 / n,
    })
}

/// Writes `trajectory.tum`, `map.csv`, `report.json` and `timing.csv`.
pub fn write_outputs(out: &RunOutput, dir: &Path, ate: Option<&AteResult>) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(io::io_err(dir))?;
    io::write_tum(&dir.join("trajectory.tum"), &out.trajectory())?;
    out.map.export_csv(&dir.join("map.csv"))?;
    let last = out.states.last();
    let report = Report {
        sweeps_seen: out.sweeps_seen,
        windows_solved: out.records.len(),
        states_written: out.states.len(),
        truncated_at: out.truncated_at,
        init: out.init_summary.as_ref(),
        final_gyro_bias: last.map(|s| arr(&s.gyro_bias)),
        final_accel_bias: last.map(|s| arr(&s.accel_bias)),
        map_points: out.map.len(),
        map_insertions: out.map.insertion_events() as u64,
        residuals: residual_stats(&out.records),
        ate: ate.map(|a| a.ate),
        ate_matches: ate.map(|a| a.matches()),
        error: out.error.as_ref().map(|e| ErrorReport {
            class: e.class(),
            message: e.to_string(),
            t: e.timestamp(),
        }),
        windows: &out.records,
    };
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    std::fs::write(&path, text).map_err(io::io_err(&path))?;
    let path = dir.join("timing.csv");
    let mut body = String::from("index,t_end,sr_ms,opt_ms,map_ms,total_ms\n");
    for t in &out.timings {
        body.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4}\n",
            t.index, t.t_end, t.reconstruction_ms, t.optimization_ms, t.map_ms, t.total_ms
        ));
    }
    std::fs::write(&path, body).map_err(io::io_err(&path))?;
    Ok(())
}

/// Runs from files, always writes whatever was produced, and returns the
/// failure if the run stopped early.
pub fn run_to_dir(cfg: &PipelineConfig, dir: &Path) -> Result<(RunOutput, Option<AteResult>), PipelineError> {
    let mut out = run(cfg)?;
    let ate = match &cfg.ground_truth {
        Some(path) if !out.states.is_empty() => {
            let gt = io::read_tum(path)?;
            out.ate(&gt).ok()
        }
        _ => None,
    };
    write_outputs(&out, dir, ate.as_ref())?;
    match out.error.take() {
        Some(e) => Err(e),
        None => Ok((out, ate)),
    }
}

/// Quaternion of a pose as `w x y z`, for reports and tests.
pub fn pose_wxyz(p: &Pose) -> [f64; 4] {
    let q = wxyz(p.rotation.quaternion());
    [q[0], q[1], q[2], q[3]]
}
