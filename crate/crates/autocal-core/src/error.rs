//! Error type shared by the calibration solvers.

use crate::geom::Sim2;

/// Errors produced by the solvers and data-preparation routines.
#[derive(Debug, Clone, thiserror::Error)]
pub enum CalibError {
    /// Not enough observations to pose the problem.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The observations do not constrain the solution (rank deficiency).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// No kernel candidate had a positive leading component, so the scale
    /// (or perpendicular distance) sign cannot be fixed.
    #[error("scale sign unresolved: every kernel candidate has {component} <= 0")]
    ScaleSign {
        /// Name of the component that must be positive.
        component: &'static str,
    },

    /// The polynomial in the Lagrange multiplier had no acceptable real root.
    #[error("numerical conditioning: {0}")]
    Conditioning(String),

    /// RANSAC found no hypothesis with enough inliers.
    #[error(
        "consensus failure: best hypothesis had {best_inliers} inliers, need at least {required}"
    )]
    ConsensusFailure {
        /// Inlier count of the best hypothesis seen.
        best_inliers: usize,
        /// Minimum acceptable inlier count.
        required: usize,
    },

    /// The joint refinement could not decrease the cost on its first step.
    /// The initial estimates are returned untouched.
    #[error("convergence failure: no cost decrease after damping exhaustion")]
    ConvergenceFailure {
        /// The initial estimates the solver was started from.
        initial: Vec<Sim2>,
    },

    /// A timestamp fell outside the interpolable range of a trajectory.
    #[error("timestamp {t} outside trajectory range [{first}, {last}]")]
    OutOfRange {
        /// Queried timestamp.
        t: f64,
        /// First timestamp of the trajectory.
        first: f64,
        /// Last timestamp of the trajectory.
        last: f64,
    },

    /// A value violated a domain invariant (non-finite, non-positive, ...).
    #[error("invalid value: {0}")]
    InvalidValue(String),
}
