//! LiDAR-inertial odometry built around sweep reconstruction.
//!
//! Raw spinning-LiDAR sweeps are cut into thirds and re-packaged into
//! overlapping full sweeps at three times the raw rate ([`sweep`]). Each
//! reconstructed sweep is registered against a voxel map ([`map`]) by jointly
//! optimizing the four states bounding its three segments ([`optimizer`]),
//! constrained by IMU pre-integration ([`imu`]) between consecutive states.
//!
//! Conventions used throughout:
//! - quaternions are Hamilton, stored w-first, and map body to world;
//! - rotation perturbations act on the right, `q ⊗ Exp(δθ)`;
//! - state error vectors are ordered `(δt, δθ, δv, δba, δbw)`, see [`geometry::idx`];
//! - `gravity_w` is the specific force an accelerometer at rest reads,
//!   expressed in the world frame (`(0, 0, +G)` for a z-up world).

pub mod geometry;
pub mod imu;
pub mod init;
pub mod map;
pub mod optimizer;
pub mod pipeline;
pub mod simulator;
pub mod sweep;
