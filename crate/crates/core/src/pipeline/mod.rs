//! Configuration, data ingestion, orchestration and evaluation.

pub mod config;
pub mod eval;
pub mod io;
pub mod run;

pub use config::{InitMode, PipelineConfig};
pub use eval::{AteResult, eval_ate};
pub use run::{Pipeline, PipelineError, RunOutput, run, run_packets, run_points, run_to_dir, write_outputs};
