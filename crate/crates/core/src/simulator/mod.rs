//! Synthetic spinning-LiDAR and IMU data with exact ground truth.

pub mod rng;
pub mod scenario;
pub mod sensors;
pub mod trajectory;
pub mod world;

pub use scenario::{Manifest, Scenario, SimulatedRun};
pub use sensors::{ImuSpec, LidarSimulator, LidarSpec, SensorSpec, simulate_imu, simulate_lidar};
pub use trajectory::{Kinematics, Trajectory, TrajectoryKind, TrajectorySpec};
pub use world::WorldModel;
