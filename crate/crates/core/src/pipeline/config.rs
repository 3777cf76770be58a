//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{Extrinsics, Pose, Vec3, quat_wxyz, wxyz};
use crate::imu::NoiseParams;
use crate::map::MapConfig;
use crate::optimizer::{ConsistencyWeight, SolverConfig, WeightMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Syntax { path: PathBuf, line: usize, reason: String },
    #[error("unknown key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("key `{key}` appears twice (line {line})")]
    DuplicateKey { key: String, line: usize },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("input file does not exist: {0}")]
    MissingFile(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Static,
    Motion,
}

/// Where a key's default comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Value prescribed by the method.
    Method,
    /// Value chosen by this implementation.
    Implementation,
    /// Input location.
    Input,
}

impl Origin {
    pub fn label(&self) -> &'static str {
        match self {
            Origin::Method => "method default",
            Origin::Implementation => "implementation default",
            Origin::Input => "input",
        }
    }
}

pub struct KeySpec {
    pub name: &'static str,
    /// Empty for required keys without a default.
    pub default: &'static str,
    pub doc: &'static str,
    pub origin: Origin,
}

const fn key(name: &'static str, default: &'static str, doc: &'static str, origin: Origin) -> KeySpec {
    KeySpec {
        name,
        default,
        doc,
        origin,
    }
}

/// Every accepted key with its default and meaning.
pub const KEYS: &[KeySpec] = &[
    key("points", "", "LiDAR point CSV (t,x,y,z in the LiDAR frame); required", Origin::Input),
    key("imu", "", "IMU CSV (t,ax,ay,az,gx,gy,gz); required", Origin::Input),
    key("sweeps", "", "optional sweep boundary CSV (sweep_id,t_begin,t_end); enables packet mode", Origin::Input),
    key("ground_truth", "", "optional TUM ground truth; adds ATE to the report", Origin::Input),
    key("lidar_rate", "10", "LiDAR revolution rate (Hz)", Origin::Method),
    key("extrinsic_translation", "0 0 0", "LiDAR origin in the IMU frame (m), `x y z`", Origin::Input),
    key("extrinsic_rotation", "1 0 0 0", "LiDAR-to-IMU rotation, quaternion `w x y z`", Origin::Input),
    key("downsample_voxel", "0.5", "sweep down-sampling voxel edge (m)", Origin::Method),
    key("gap_tolerance", "0.005", "largest tolerated gap between consecutive segments (s)", Origin::Implementation),
    key("map_voxel", "1.0", "map voxel edge (m)", Origin::Method),
    key("map_max_points", "20", "maximum points stored per map voxel", Origin::Method),
    key("map_min_gap", "0.1", "minimum time between map insertions (s)", Origin::Method),
    key("map_min_point_spacing", "0", "minimum spacing between points of one voxel (m)", Origin::Implementation),
    key("prune_radius", "100", "map voxels farther than this from the platform are dropped (m)", Origin::Implementation),
    key("registrations", "5", "data association passes per window", Origin::Method),
    key("iterations", "5", "solver iterations per association pass", Origin::Method),
    key("huber_delta", "0.3", "robust kernel threshold on whitened point residuals", Origin::Implementation),
    key("point_variance", "0.001", "point-to-plane residual variance", Origin::Method),
    key("tolerance", "1e-4", "pose update norm below which iterations stop", Origin::Implementation),
    key("min_points", "50", "fewest associations accepted by the solver", Origin::Implementation),
    key("knn", "20", "map neighbors used to fit each plane", Origin::Method),
    key("min_planarity", "0.5", "smallest planarity score of a usable plane", Origin::Implementation),
    key("max_plane_distance", "0.2", "largest point-to-plane distance of an association (m)", Origin::Implementation),
    key("plane_thickness", "0.05", "largest neighbor deviation from a fitted plane (m)", Origin::Implementation),
    key("weight_mode", "planarity", "point weights: `planarity` or `constant`", Origin::Implementation),
    key("imu_residuals", "true", "use IMU pre-integration residuals", Origin::Method),
    key("first_segment_imu", "true", "keep the IMU residual of the first segment", Origin::Method),
    key("consistency", "true", "tie the first window state to the previous solution", Origin::Method),
    key("consistency_weight", "posterior", "consistency information: `unit`, or `posterior` to weight velocity and biases by the previous solve", Origin::Implementation),
    key("additional_residuals", "true", "use window-spanning point residuals", Origin::Method),
    key("init_mode", "static", "initialization: `static` or `motion`", Origin::Method),
    key("static_window", "1.0", "stationary window used by static initialization (s)", Origin::Implementation),
    key("bootstrap_sweeps", "20", "reconstructed sweeps tracked by LiDAR only during motion initialization", Origin::Method),
    key("sigma_a", "0.02", "accelerometer white noise per sample (m/s²)", Origin::Implementation),
    key("sigma_w", "0.002", "gyroscope white noise per sample (rad/s)", Origin::Implementation),
    key("sigma_ba", "0.001", "accelerometer bias random walk per sample (m/s²)", Origin::Implementation),
    key("sigma_bw", "0.0001", "gyroscope bias random walk per sample (rad/s)", Origin::Implementation),
    key("gravity", "9.81", "local gravity magnitude (m/s²)", Origin::Method),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub points: PathBuf,
    pub imu: PathBuf,
    pub sweeps: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub lidar_rate: f64,
    pub lidar_to_imu: Pose,
    pub downsample_voxel: f64,
    pub gap_tolerance: f64,
    pub map: MapConfig,
    pub prune_radius: f64,
    pub solver: SolverConfig,
    pub init_mode: InitMode,
    pub static_window: f64,
    pub bootstrap_sweeps: usize,
    pub noise: NoiseParams,
}

impl PipelineConfig {
    /// Defaults for every key, with the given inputs.
    pub fn with_inputs(points: PathBuf, imu: PathBuf) -> Self {
        let mut cfg = Self {
            points,
            imu,
            sweeps: None,
            ground_truth: None,
            lidar_rate: 0.0,
            lidar_to_imu: Pose::identity(),
            downsample_voxel: 0.0,
            gap_tolerance: 0.0,
            map: MapConfig::default(),
            prune_radius: 0.0,
            solver: SolverConfig::default(),
            init_mode: InitMode::Static,
            static_window: 0.0,
            bootstrap_sweeps: 0,
            noise: NoiseParams::default(),
        };
        for k in KEYS.iter().filter(|k| !k.default.is_empty()) {
            cfg.set(k.name, k.default).expect("defaults are valid");
        }
        cfg
    }

    pub fn extrinsics(&self) -> Extrinsics {
        Extrinsics::new(self.lidar_to_imu)
    }

    /// Segment period of the reconstructed stream (s).
    pub fn segment_period(&self) -> f64 {
        1.0 / (3.0 * self.lidar_rate)
    }

    pub fn gravity_magnitude(&self) -> f64 {
        self.noise.gravity
    }

    /// Parses configuration text; relative paths resolve against `base`.
    pub fn parse(text: &str, source: &Path, base: &Path) -> Result<Self, ConfigError> {
        let mut entries: Vec<(&str, &str, usize)> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((name, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    path: source.to_path_buf(),
                    line,
                    reason: format!("expected `key = value`, found `{content}`"),
                });
            };
            let (name, value) = (name.trim(), value.trim());
            if !KEYS.iter().any(|k| k.name == name) {
                return Err(ConfigError::UnknownKey {
                    key: name.to_string(),
                    line,
                });
            }
            if entries.iter().any(|(n, _, _)| *n == name) {
                return Err(ConfigError::DuplicateKey {
                    key: name.to_string(),
                    line,
                });
            }
            entries.push((name, value, line));
        }
        let find = |name: &'static str| entries.iter().find(|(n, _, _)| *n == name).map(|(_, v, _)| *v);
        let path_of = |name: &'static str| find(name).filter(|v| !v.is_empty()).map(|v| base.join(v));
        let points = path_of("points").ok_or(ConfigError::MissingKey("points"))?;
        let imu = path_of("imu").ok_or(ConfigError::MissingKey("imu"))?;
        let mut cfg = Self::with_inputs(points, imu);
        cfg.sweeps = path_of("sweeps");
        cfg.ground_truth = path_of("ground_truth");
        for (name, value, _) in &entries {
            if !matches!(*name, "points" | "imu" | "sweeps" | "ground_truth") {
                cfg.set(name, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    /// Checks that referenced inputs exist and numeric values are in range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for p in [Some(&self.points), Some(&self.imu), self.sweeps.as_ref(), self.ground_truth.as_ref()]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return Err(ConfigError::MissingFile(p.clone()));
            }
        }
        Ok(())
    }

    fn set(&mut self, name: &str, value: &str) -> Result<(), ConfigError> {
        let invalid = |reason: &str| ConfigError::InvalidValue {
            key: name.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        let number = || -> Result<f64, ConfigError> {
            value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| invalid("expected a number"))
        };
        let positive = || number().and_then(|v| if v > 0.0 { Ok(v) } else { Err(invalid("must be positive")) });
        let non_negative = || number().and_then(|v| if v >= 0.0 { Ok(v) } else { Err(invalid("must not be negative")) });
        let count = || -> Result<usize, ConfigError> {
            value
                .parse::<usize>()
                .ok()
                .filter(|v| *v > 0)
                .ok_or_else(|| invalid("expected a positive integer"))
        };
        let flag = || match value {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(invalid("expected `true` or `false`")),
        };
        let numbers = |n: usize| -> Result<Vec<f64>, ConfigError> {
            let v = value
                .split_whitespace()
                .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| invalid("expected numbers"))?;
            if v.len() == n {
                Ok(v)
            } else {
                Err(invalid(&format!("expected {n} numbers")))
            }
        };
        match name {
            "lidar_rate" => self.lidar_rate = positive()?,
            "extrinsic_translation" => {
                let v = numbers(3)?;
                self.lidar_to_imu.translation = Vec3::new(v[0], v[1], v[2]);
            }
            "extrinsic_rotation" => {
                let v = numbers(4)?;
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(invalid("quaternion must have unit norm"));
                }
                self.lidar_to_imu.rotation = quat_wxyz(v[0], v[1], v[2], v[3]);
            }
            "downsample_voxel" => self.downsample_voxel = positive()?,
            "gap_tolerance" => self.gap_tolerance = non_negative()?,
            "map_voxel" => self.map.voxel_size = positive()?,
            "map_max_points" => self.map.max_points = count()?,
            "map_min_gap" => self.map.min_gap = non_negative()?,
            "map_min_point_spacing" => self.map.min_point_spacing = non_negative()?,
            "prune_radius" => self.prune_radius = positive()?,
            "registrations" => self.solver.registrations = count()?,
            "iterations" => self.solver.iterations = count()?,
            "huber_delta" => self.solver.huber_delta = positive()?,
            "point_variance" => self.solver.p_l = positive()?,
            "tolerance" => self.solver.tol = positive()?,
            "min_points" => self.solver.min_points = count()?,
            "knn" => {
                let k = count()?;
                if k < crate::map::MIN_PLANE_POINTS {
                    return Err(invalid("too few neighbors to fit a plane"));
                }
                self.solver.knn = k;
            }
            "min_planarity" => {
                let v = non_negative()?;
                if v > 1.0 {
                    return Err(invalid("must lie in [0, 1]"));
                }
                self.solver.min_planarity = v;
            }
            "max_plane_distance" => self.solver.max_plane_distance = positive()?,
            "plane_thickness" => self.solver.plane_thickness = positive()?,
            "weight_mode" => {
                self.solver.weight_mode = match value {
                    "planarity" => WeightMode::Planarity,
                    "constant" => WeightMode::Constant,
                    _ => return Err(invalid("expected `planarity` or `constant`")),
                }
            }
            "imu_residuals" => self.solver.residuals.imu = flag()?,
            "first_segment_imu" => self.solver.residuals.first_segment_imu = flag()?,
            "consistency" => self.solver.residuals.consistency = flag()?,
            "consistency_weight" => {
                self.solver.consistency_weight = match value {
                    "unit" => ConsistencyWeight::Unit,
                    "posterior" => ConsistencyWeight::Posterior,
                    _ => return Err(invalid("expected `unit` or `posterior`")),
                }
            }
            "additional_residuals" => self.solver.residuals.additional = flag()?,
            "init_mode" => {
                self.init_mode = match value {
                    "static" => InitMode::Static,
                    "motion" => InitMode::Motion,
                    _ => return Err(invalid("expected `static` or `motion`")),
                }
            }
            "static_window" => self.static_window = positive()?,
            "bootstrap_sweeps" => {
                let n = count()?;
                if n < 3 {
                    return Err(invalid("at least 3 sweeps are needed"));
                }
                self.bootstrap_sweeps = n;
            }
            "sigma_a" => self.noise.sigma_a = positive()?,
            "sigma_w" => self.noise.sigma_w = positive()?,
            "sigma_ba" => self.noise.sigma_ba = positive()?,
            "sigma_bw" => self.noise.sigma_bw = positive()?,
            "gravity" => self.noise.gravity = positive()?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: name.to_string(),
                    line: 0,
                });
            }
        }
        Ok(())
    }

    /// Renders every key; paths are written relative to `base` when possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let t = self.lidar_to_imu.translation;
        let q = wxyz(self.lidar_to_imu.rotation.quaternion());
        let flag = |b: bool| if b { "true" } else { "false" }.to_string();
        let s = &self.solver;
        let values: Vec<(&str, String)> = vec![
            ("points", rel(&self.points)),
            ("imu", rel(&self.imu)),
            ("sweeps", self.sweeps.as_deref().map(rel).unwrap_or_default()),
            ("ground_truth", self.ground_truth.as_deref().map(rel).unwrap_or_default()),
            ("lidar_rate", self.lidar_rate.to_string()),
            ("extrinsic_translation", format!("{} {} {}", t.x, t.y, t.z)),
            ("extrinsic_rotation", format!("{} {} {} {}", q[0], q[1], q[2], q[3])),
            ("downsample_voxel", self.downsample_voxel.to_string()),
            ("gap_tolerance", self.gap_tolerance.to_string()),
            ("map_voxel", self.map.voxel_size.to_string()),
            ("map_max_points", self.map.max_points.to_string()),
            ("map_min_gap", self.map.min_gap.to_string()),
            ("map_min_point_spacing", self.map.min_point_spacing.to_string()),
            ("prune_radius", self.prune_radius.to_string()),
            ("registrations", s.registrations.to_string()),
            ("iterations", s.iterations.to_string()),
            ("huber_delta", s.huber_delta.to_string()),
            ("point_variance", s.p_l.to_string()),
            ("tolerance", s.tol.to_string()),
            ("min_points", s.min_points.to_string()),
            ("knn", s.knn.to_string()),
            ("min_planarity", s.min_planarity.to_string()),
            ("max_plane_distance", s.max_plane_distance.to_string()),
            ("plane_thickness", s.plane_thickness.to_string()),
            (
                "weight_mode",
                match s.weight_mode {
                    WeightMode::Planarity => "planarity",
                    WeightMode::Constant => "constant",
                }
                .to_string(),
            ),
            ("imu_residuals", flag(s.residuals.imu)),
            ("first_segment_imu", flag(s.residuals.first_segment_imu)),
            ("consistency", flag(s.residuals.consistency)),
            (
                "consistency_weight",
                match s.consistency_weight {
                    ConsistencyWeight::Unit => "unit",
                    ConsistencyWeight::Posterior => "posterior",
                }
                .to_string(),
            ),
            ("additional_residuals", flag(s.residuals.additional)),
            (
                "init_mode",
                match self.init_mode {
                    InitMode::Static => "static",
                    InitMode::Motion => "motion",
                }
                .to_string(),
            ),
            ("static_window", self.static_window.to_string()),
            ("bootstrap_sweeps", self.bootstrap_sweeps.to_string()),
            ("sigma_a", self.noise.sigma_a.to_string()),
            ("sigma_w", self.noise.sigma_w.to_string()),
            ("sigma_ba", self.noise.sigma_ba.to_string()),
            ("sigma_bw", self.noise.sigma_bw.to_string()),
            ("gravity", self.noise.gravity.to_string()),
        ];
        let mut out = String::new();
        for (name, value) in values {
            if value.is_empty() {
                continue;
            }
            let _ = writeln!(out, "{name} = {value}");
        }
        out
    }
}

/// Key reference for `--help`.
pub fn key_reference() -> String {
    let mut out = String::from("Configuration keys (`key = value`, `#` starts a comment):\n");
    for k in KEYS {
        let default = if k.default.is_empty() { "none" } else { k.default };
        let _ = writeln!(out, "  {:<22} {} [default: {default}; {}]", k.name, k.doc, k.origin.label());
    }
    out
}
