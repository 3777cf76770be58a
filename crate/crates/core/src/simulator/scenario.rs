//! Named scenarios, in-memory generation and on-disk export.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::sensors::{ExtrinsicsSpec, ImuSpec, LidarSimulator, LidarSpec, SensorError, SensorSpec, simulate_imu};
use super::trajectory::{Trajectory, TrajectoryError, TrajectorySpec};
use super::world::{WorldError, WorldModel};
use crate::geometry::{Pose, Vec3};
use crate::imu::ImuSample;
use crate::pipeline::config::{InitMode, PipelineConfig};
use crate::pipeline::io::{self, IoError};
use crate::sweep::RawSweep;

pub const PRESETS: [&str; 5] = ["static", "corridor", "corridor_noisy", "circle", "figure_eight"];
pub const MANIFEST_FILE: &str = "scenario.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("invalid ground-truth rate {0}")]
    GroundTruthRate(f64),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

/// Everything needed to regenerate a synthetic run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Gravity magnitude (m/s²); the world z axis points up.
    pub gravity: f64,
    pub trajectory: TrajectorySpec,
    pub world: WorldModel,
    pub sensors: SensorSpec,
    /// Ground-truth output rate (Hz).
    pub gt_rate: f64,
}

/// Realistic IMU noise levels and small constant biases.
fn noisy_imu() -> ImuSpec {
    ImuSpec {
        accel_noise: 0.02,
        gyro_noise: 0.002,
        accel_bias: [0.03, -0.02, 0.04],
        gyro_bias: [0.002, -0.001, 0.0015],
        ..ImuSpec::default()
    }
}

impl Scenario {
    pub fn preset(name: &str, seed: u64) -> Result<Self, ScenarioError> {
        let (trajectory, world, sensors) = match name {
            "static" => (
                TrajectorySpec::stationary(10.0),
                WorldModel::box_room(10.0, 8.0, 3.0),
                SensorSpec::default(),
            ),
            "corridor" => (
                TrajectorySpec::constant_velocity(1.0, 32.5),
                WorldModel::corridor(),
                SensorSpec::default(),
            ),
            "corridor_noisy" => (
                TrajectorySpec::constant_velocity(1.0, 32.5),
                WorldModel::corridor(),
                SensorSpec {
                    imu: noisy_imu(),
                    lidar: LidarSpec {
                        range_noise: 0.01,
                        ..LidarSpec::default()
                    },
                    ..SensorSpec::default()
                },
            ),
            "circle" => (
                TrajectorySpec {
                    start: [0.0, -10.0, 0.0],
                    ..TrajectorySpec::circle(10.0, 1.0, 30.0)
                },
                WorldModel::hall(),
                SensorSpec::default(),
            ),
            "figure_eight" => (
                TrajectorySpec {
                    attitude_amplitude: 0.03,
                    attitude_frequency: 0.3,
                    static_time: 0.0,
                    ramp_time: 0.0,
                    ..TrajectorySpec::figure_eight(8.0, 1.5, 30.0)
                },
                WorldModel::hall(),
                SensorSpec {
                    extrinsics: ExtrinsicsSpec {
                        translation: [0.1, 0.0, 0.2],
                        rotation_wxyz: [1.0, 0.0, 0.0, 0.0],
                    },
                    ..SensorSpec::default()
                },
            ),
            other => return Err(ScenarioError::UnknownPreset(other.to_string())),
        };
        Ok(Self {
            name: name.to_string(),
            seed,
            gravity: 9.81,
            trajectory,
            world,
            sensors,
            gt_rate: 300.0,
        })
    }

    pub fn validate(&self) -> Result<Trajectory, ScenarioError> {
        self.sensors.validate()?;
        WorldModel::new(self.world.planes.clone())?;
        if !(self.gt_rate > 0.0) {
            return Err(ScenarioError::GroundTruthRate(self.gt_rate));
        }
        Ok(Trajectory::new(self.trajectory)?)
    }

    pub fn gravity_w(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.gravity)
    }

    pub fn imu_samples(&self, traj: &Trajectory) -> Vec<ImuSample> {
        simulate_imu(traj, &self.sensors.imu, &self.gravity_w(), self.seed)
    }

    pub fn lidar<'a>(&'a self, traj: &'a Trajectory) -> LidarSimulator<'a> {
        LidarSimulator::new(traj, &self.world, &self.sensors, self.seed)
    }

    /// Body poses at `k / gt_rate` covering `[0, duration]`.
    pub fn ground_truth(&self, traj: &Trajectory) -> Vec<(f64, Pose)> {
        let n = (traj.duration() * self.gt_rate + 1e-9).floor() as usize;
        let mut out: Vec<(f64, Pose)> = (0..=n)
            .map(|k| {
                let t = k as f64 / self.gt_rate;
                (t, traj.at(t).pose())
            })
            .collect();
        if out.last().is_some_and(|(t, _)| *t < traj.duration() - 1e-9) {
            out.push((traj.duration(), traj.at(traj.duration()).pose()));
        }
        out
    }

    /// Generates the whole run in memory.
    pub fn generate(&self) -> Result<SimulatedRun, ScenarioError> {
        let traj = self.validate()?;
        Ok(SimulatedRun {
            imu: self.imu_samples(&traj),
            sweeps: self.lidar(&traj).collect(),
            ground_truth: self.ground_truth(&traj),
            trajectory: traj,
        })
    }

    /// Pipeline configuration matching the simulated sensors.
    pub fn pipeline_config(&self, points: PathBuf, imu: PathBuf) -> PipelineConfig {
        let mut cfg = PipelineConfig::with_inputs(points, imu);
        cfg.lidar_rate = self.sensors.lidar.rev_rate;
        cfg.lidar_to_imu = self.sensors.extrinsics.pose();
        cfg.noise.gravity = self.gravity;
        if self.trajectory.static_time < 1.0 {
            cfg.init_mode = InitMode::Motion;
        }
        cfg
    }

    /// Writes the run and its manifest into `dir`, streaming points one revolution at a time.
    pub fn export(&self, dir: &Path) -> Result<Manifest, ScenarioError> {
        let traj = self.validate()?;
        std::fs::create_dir_all(dir).map_err(io::io_err(dir))?;
        let mut files = BTreeMap::new();

        let points_path = dir.join("points.csv");
        let sweeps_path = dir.join("sweeps.csv");
        {
            let mut points = io::create(&points_path)?;
            let mut sweeps = io::create(&sweeps_path)?;
            writeln!(points, "{}", io::POINTS_HEADER.join(",")).map_err(io::io_err(&points_path))?;
            writeln!(sweeps, "{}", io::SWEEPS_HEADER.join(",")).map_err(io::io_err(&sweeps_path))?;
            for (k, sweep) in self.lidar(&traj).enumerate() {
                io::write_points(&mut points, sweep.points()).map_err(io::io_err(&points_path))?;
                writeln!(sweeps, "{k},{},{}", sweep.t_begin(), sweep.t_end()).map_err(io::io_err(&sweeps_path))?;
            }
            points.flush().map_err(io::io_err(&points_path))?;
            sweeps.flush().map_err(io::io_err(&sweeps_path))?;
        }
        io::write_imu(&dir.join("imu.csv"), &self.imu_samples(&traj))?;
        io::write_tum(&dir.join("gt.tum"), &self.ground_truth(&traj))?;

        let mut cfg = self.pipeline_config(dir.join("points.csv"), dir.join("imu.csv"));
        cfg.ground_truth = Some(dir.join("gt.tum"));
        let cfg_path = dir.join("run.cfg");
        std::fs::write(&cfg_path, cfg.to_text(dir)).map_err(io::io_err(&cfg_path))?;

        for name in ["points.csv", "sweeps.csv", "imu.csv", "gt.tum", "run.cfg"] {
            files.insert(name.to_string(), file_sha256(&dir.join(name))?);
        }
        let manifest = Manifest::new(self.clone(), files);
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, manifest.to_json()).map_err(io::io_err(&path))?;
        Ok(manifest)
    }

    /// Scenario from a preset name or a path to a manifest.
    pub fn resolve(name_or_path: &str, seed: u64) -> Result<Self, ScenarioError> {
        if PRESETS.contains(&name_or_path) {
            return Self::preset(name_or_path, seed);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
            return Ok(Manifest::load(&file)?.scenario);
        }
        Err(ScenarioError::UnknownPreset(name_or_path.to_string()))
    }
}

/// An in-memory synthetic run.
#[derive(Debug, Clone)]
pub struct SimulatedRun {
    pub trajectory: Trajectory,
    pub imu: Vec<ImuSample>,
    pub sweeps: Vec<RawSweep>,
    pub ground_truth: Vec<(f64, Pose)>,
}

/// Scenario description plus output digests, serialized as `scenario.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub generator: String,
    pub units: BTreeMap<String, String>,
    #[serde(flatten)]
    pub scenario: Scenario,
    /// SHA-256 of every exported file.
    #[serde(default)]
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(scenario: Scenario, files: BTreeMap<String, String>) -> Self {
        let units = [
            ("time", "s"),
            ("length", "m"),
            ("angle", "rad"),
            ("acceleration", "m/s^2"),
            ("angular_rate", "rad/s"),
            ("quaternion", "w x y z, Hamilton, body to world"),
            ("points", "LiDAR frame at capture time"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            version: MANIFEST_VERSION,
            generator: "counter-based splitmix64, one stream per sensor; Gaussian by Box-Muller".to_string(),
            units,
            scenario,
            files,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(io::io_err(path))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| ScenarioError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(ScenarioError::Manifest {
                path: path.to_path_buf(),
                reason: format!("unsupported version {}", m.version),
            });
        }
        Ok(m)
    }

    /// Digest of the serialized manifest.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String, ScenarioError> {
    let mut file = std::fs::File::open(path).map_err(io::io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = std::io::Read::read(&mut file, &mut buf).map_err(io::io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}
