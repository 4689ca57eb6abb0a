//! Extrinsic calibration of heterogeneous robot sensors from per-sensor
//! egomotion and ground-plane observations.
//!
//! The crate is organized around the two closed-form solvers and the
//! machinery that feeds them:
//!
//! - [`geom`]: Sim(2) / SE(2) group algebra and the ground-alignment
//!   rigid transform.
//! - [`sync`]: trajectories, pose interpolation and resampling of
//!   synchronous incremental motion pairs.
//! - [`planar`]: closed-form pairwise Sim(2) calibration (translation,
//!   yaw and scale) from motion pairs.
//! - [`ground`]: closed-form ground alignment (height, pitch, roll) from
//!   weighted plane observations, plus motion projection.
//! - [`robust`]: RANSAC wrapper around the pairwise solver.
//! - [`joint`]: joint multi-sensor refinement with a robust loss.
//! - [`sim`]: deterministic synthetic-data generator for validation.

pub mod error;
pub mod geom;
pub mod ground;
pub mod joint;
pub mod planar;
pub mod robust;
pub mod sim;
pub mod sync;

mod linalg;
mod poly;

pub use error::CalibError;
pub use geom::{normalize_angle, GroundAlignment, Pose2, Pose3, Sim2};
pub use ground::{GroundSolution, WeightedPoint3};
pub use joint::{JointProblem, LossForm};
pub use planar::{PairwiseSolution, PhiVector, QcqpSystem};
pub use robust::{RansacConfig, RobustEstimate};
pub use sim::{SimConfig, SimInstance};
pub use sync::{MotionPair, TimedPose2, Trajectory2};
