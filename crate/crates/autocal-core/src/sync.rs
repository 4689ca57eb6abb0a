//! Trajectory representation, pose interpolation and resampling of
//! synchronous incremental motion pairs.
//!
//! Heterogeneous sensors are asynchronous and run at different rates; one
//! sensor provides the time reference and the others are linearly
//! interpolated at its sample times. Angles interpolate along the shortest
//! arc so incremental motions never pick up spurious 2*pi jumps, and no
//! extrapolation is ever performed beyond a trajectory's ends.

use crate::geom::{normalize_angle, Pose2};
use crate::CalibError;
use serde::{Deserialize, Serialize};

/// A timestamped planar pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose2 {
    /// Sample time in seconds.
    pub t: f64,
    /// Pose at that time.
    pub pose: Pose2,
}

impl TimedPose2 {
    /// Convenience constructor.
    pub fn new(t: f64, pose: Pose2) -> Self {
        Self { t, pose }
    }
}

/// An ordered planar trajectory with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory2 {
    samples: Vec<TimedPose2>,
}

impl Trajectory2 {
    /// Builds a trajectory, enforcing at least two samples and strictly
    /// increasing finite timestamps.
    pub fn new(samples: Vec<TimedPose2>) -> Result<Self, CalibError> {
        if samples.len() < 2 {
            return Err(CalibError::InsufficientData(format!(
                "trajectory needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        for pair in samples.windows(2) {
            if !pair[0].t.is_finite() || !pair[1].t.is_finite() {
                return Err(CalibError::InvalidValue("non-finite timestamp".into()));
            }
            if pair[1].t <= pair[0].t {
                return Err(CalibError::InvalidValue(format!(
                    "timestamps must be strictly increasing ({} then {})",
                    pair[0].t, pair[1].t
                )));
            }
        }
        Ok(Self { samples })
    }

    /// The samples in time order.
    pub fn samples(&self) -> &[TimedPose2] {
        &self.samples
    }

    /// First timestamp.
    pub fn start_time(&self) -> f64 {
        self.samples[0].t
    }

    /// Last timestamp.
    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false: construction requires two samples.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Average sample rate in Hz.
    pub fn mean_rate(&self) -> f64 {
        (self.samples.len() - 1) as f64 / (self.end_time() - self.start_time())
    }

    /// Incremental motions between consecutive samples.
    pub fn incremental_motions(&self) -> Vec<Pose2> {
        self.samples
            .windows(2)
            .map(|w| incremental_motion(&w[0].pose, &w[1].pose))
            .collect()
    }

    /// Re-integrates incremental motions from a start pose, producing the
    /// trajectory with the given timestamps.
    pub fn integrate(
        start: Pose2,
        timestamps: &[f64],
        motions: &[Pose2],
    ) -> Result<Self, CalibError> {
        if timestamps.len() != motions.len() + 1 {
            return Err(CalibError::InvalidValue(format!(
                "{} timestamps cannot frame {} motions",
                timestamps.len(),
                motions.len()
            )));
        }
        let mut samples = Vec::with_capacity(timestamps.len());
        let mut pose = start;
        samples.push(TimedPose2::new(timestamps[0], pose));
        for (t, m) in timestamps[1..].iter().zip(motions) {
            pose = pose.compose(m);
            samples.push(TimedPose2::new(*t, pose));
        }
        Self::new(samples)
    }
}

/// A pair of incremental motions covering the same time interval:
/// the reference sensor's motion and another sensor's motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionPair {
    /// Reference-sensor incremental motion (metric space).
    pub p_ref: Pose2,
    /// Other-sensor incremental motion (possibly scaled units).
    pub p_other: Pose2,
    /// Index of the sample opening the interval in the time-base stream.
    pub k: usize,
}

impl MotionPair {
    /// Convenience constructor.
    pub fn new(p_ref: Pose2, p_other: Pose2, k: usize) -> Self {
        Self { p_ref, p_other, k }
    }
}

/// Relative motion between two poses of the same sensor,
/// `inverse(q_k) ⊕ q_{k+1}`.
pub fn incremental_motion(q_k: &Pose2, q_k1: &Pose2) -> Pose2 {
    q_k.inverse().compose(q_k1)
}

/// Linearly interpolated pose at time `t`.
///
/// Translation interpolates componentwise; the heading follows the shortest
/// arc between the bracketing samples. Sample times reproduce the stored
/// pose exactly. Out-of-range queries are an error: callers must trim,
/// never extrapolate.
pub fn interpolate_pose(traj: &Trajectory2, t: f64) -> Result<Pose2, CalibError> {
    let samples = traj.samples();
    if t < traj.start_time() || t > traj.end_time() {
        return Err(CalibError::OutOfRange {
            t,
            first: traj.start_time(),
            last: traj.end_time(),
        });
    }
    // Index of the first sample with time >= t.
    let idx = samples.partition_point(|s| s.t < t);
    if idx < samples.len() && samples[idx].t == t {
        return Ok(samples[idx].pose);
    }
    let lo = &samples[idx - 1];
    let hi = &samples[idx];
    let s = (t - lo.t) / (hi.t - lo.t);
    let arc = normalize_angle(hi.pose.theta() - lo.pose.theta());
    Ok(Pose2::new(
        lo.pose.x() + s * (hi.pose.x() - lo.pose.x()),
        lo.pose.y() + s * (hi.pose.y() - lo.pose.y()),
        lo.pose.theta() + s * arc,
    ))
}

/// Resamples synchronous incremental motion pairs on the reference
/// sensor's sample times.
///
/// Reference timestamps outside the temporal overlap of the two
/// trajectories are dropped; for each surviving consecutive timestamp pair
/// the reference motion comes from the reference poses and the other
/// sensor's motion from its interpolated poses at the same two times.
pub fn resample_synchronous(
    reference: &Trajectory2,
    other: &Trajectory2,
) -> Result<Vec<MotionPair>, CalibError> {
    let t_min = reference.start_time().max(other.start_time());
    let t_max = reference.end_time().min(other.end_time());
    if t_min > t_max {
        return Err(CalibError::InsufficientData(
            "trajectories have no temporal overlap".into(),
        ));
    }

    let kept: Vec<&TimedPose2> = reference
        .samples()
        .iter()
        .filter(|s| s.t >= t_min && s.t <= t_max)
        .collect();
    if kept.len() < 2 {
        return Err(CalibError::InsufficientData(format!(
            "only {} reference samples inside the overlap, need at least 2",
            kept.len()
        )));
    }

    kept.windows(2)
        .enumerate()
        .map(|(k, w)| {
            let p_ref = incremental_motion(&w[0].pose, &w[1].pose);
            let a = interpolate_pose(other, w[0].t)?;
            let b = interpolate_pose(other, w[1].t)?;
            Ok(MotionPair::new(p_ref, incremental_motion(&a, &b), k))
        })
        .collect()
}
