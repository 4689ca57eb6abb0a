//! Batch calibration pipeline over trajectory and ground-point files:
//! ingest, ground alignment, projection, synchronization, robust planar
//! solve, joint refinement and reporting.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod simulate;

pub use config::{JointConfig, PipelineConfig, SensorEntry};
pub use pipeline::{run_pipeline, PipelineError};
pub use report::CalibrationReport;
