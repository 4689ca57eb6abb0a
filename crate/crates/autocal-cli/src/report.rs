//! Calibration report and plot-data emission.
//!
//! The report is a single JSON document that round-trips losslessly; the
//! plot data are CSV files from which the report's residual statistics can
//! be recomputed (residual series, trajectory overlays, inlier masks).

use crate::config::PipelineConfig;
use crate::pipeline::PipelineError;
use autocal_core::sim::SensorKind;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Planar (x, y, yaw, scale) results of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarReport {
    /// Translation x in sensor units.
    pub x: f64,
    /// Translation y in sensor units.
    pub y: f64,
    /// Yaw in radians.
    pub theta: f64,
    /// Scale factor (reference units per sensor unit).
    pub scale: f64,
    /// Lever arm `scale * (x, y)` in reference (metric) units.
    pub metric_lever_arm: [f64; 2],
    /// Estimate before joint refinement (RANSAC + closed form).
    pub initial: InitialPlanar,
    /// RANSAC inlier count.
    pub inliers: usize,
    /// Total synchronous motion pairs.
    pub total_pairs: usize,
    /// RANSAC hypotheses evaluated.
    pub ransac_iterations: usize,
    /// RMS of the metric translation error over inliers, at the initial
    /// estimate.
    pub rms_before_refine: f64,
    /// Same statistic at the refined estimate; absent when the joint stage
    /// is disabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms_after_refine: Option<f64>,
    /// Degeneracy and conditioning warnings.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Pre-refinement planar estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialPlanar {
    /// Translation x in sensor units.
    pub x: f64,
    /// Translation y in sensor units.
    pub y: f64,
    /// Yaw in radians.
    pub theta: f64,
    /// Scale factor.
    pub scale: f64,
}

/// Ground-alignment results of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundReport {
    /// Perpendicular distance in sensor units.
    pub z: f64,
    /// Roll-like angle, radians.
    pub alpha: f64,
    /// Pitch-like angle, radians.
    pub beta: f64,
    /// Metric height `scale * z`; absent until the planar scale is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_z: Option<f64>,
    /// Weighted RMS plane residual in sensor units.
    pub rms_residual: f64,
    /// Number of ground observations used.
    pub points: usize,
    /// Degeneracy and conditioning warnings.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Outcome of one sensor's calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SensorStatus {
    /// All applicable stages succeeded.
    Calibrated,
    /// Some stage failed; the reason is recorded and the sensor carries
    /// whatever partial results were obtained.
    Failed {
        /// Failure description.
        reason: String,
    },
}

/// Per-sensor section of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReport {
    /// Sensor id.
    pub id: String,
    /// Sensor category.
    pub kind: SensorKind,
    /// Outcome.
    pub status: SensorStatus,
    /// Planar calibration (absent for the reference sensor and failures).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planar: Option<PlanarReport>,
    /// Ground alignment (absent for planar sensors and failures).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<GroundReport>,
}

/// Frame conventions the results are expressed in; echoed into every
/// report because ingested trajectories arrive in whatever frame the
/// upstream odometry/SLAM system chose.
pub const FRAME_CONVENTIONS: &str = "Planar parameters map each sensor's trajectory frame \
into the reference sensor's trajectory frame (translation in sensor units, lever arm in \
reference units); ground alignment relates each sensor frame to a plane frame at the \
projection of the sensor origin, z up, in-plane rotation fixed to zero. If an ingested \
trajectory was estimated in some other body frame, the calibration is relative to that \
frame, not to the physical sensor.";

/// The full calibration report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Name of the producing tool.
    pub tool: String,
    /// Tool version.
    pub version: String,
    /// Wall-clock generation time (excluded from determinism comparisons).
    pub generated_at: String,
    /// Frame conventions of all reported parameters.
    pub conventions: String,
    /// Reference sensor id.
    pub reference: String,
    /// Time-base sensor id actually used.
    pub time_base: String,
    /// Number of time-base samples dropped because they fell outside the
    /// common overlap window.
    pub dropped_time_base_samples: usize,
    /// Configuration echo.
    pub config: PipelineConfig,
    /// Per-sensor results, in declaration order.
    pub sensors: Vec<SensorReport>,
}

impl CalibrationReport {
    /// Whether any sensor failed.
    pub fn any_failed(&self) -> bool {
        self.sensors
            .iter()
            .any(|s| matches!(s.status, SensorStatus::Failed { .. }))
    }

    /// Serializes to pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Parses a report back from JSON.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Writes `report.json` into `dir` and returns the path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let path = dir.join("report.json");
        std::fs::write(&path, self.to_json()).map_err(|e| PipelineError::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(path)
    }
}

/// Per-motion residual series of one sensor, for plotting and
/// recomputation of the report statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    /// Residual norm at the initial estimate, one entry per motion pair.
    pub initial: Vec<f64>,
    /// Residual norm at the final estimate.
    pub finals: Vec<f64>,
    /// RANSAC inlier mask.
    pub inliers: Vec<bool>,
}

impl ResidualSeries {
    /// RMS over the inlier subset of a column.
    pub fn rms_over_inliers(values: &[f64], inliers: &[bool]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (v, keep) in values.iter().zip(inliers) {
            if *keep {
                sum += v * v;
                n += 1;
            }
        }
        (sum / n.max(1) as f64).sqrt()
    }

    /// Writes the `index,residual_initial,residual_final,inlier` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<(), PipelineError> {
        let mut out = csv_writer(path)?;
        writeln!(out, "index,residual_initial,residual_final,inlier").map_err(io_err(path))?;
        for (k, ((a, b), keep)) in self
            .initial
            .iter()
            .zip(&self.finals)
            .zip(&self.inliers)
            .enumerate()
        {
            writeln!(out, "{},{},{},{}", k, a, b, u8::from(*keep)).map_err(io_err(path))?;
        }
        Ok(())
    }

    /// Parses the CSV back (used by the self-consistency checks).
    pub fn read_csv(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut series = ResidualSeries {
            initial: Vec::new(),
            finals: Vec::new(),
            inliers: Vec::new(),
        };
        for line in text.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(PipelineError::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    msg: format!("expected 4 CSV fields, got {}", fields.len()),
                });
            }
            series
                .initial
                .push(fields[1].parse().map_err(|_| PipelineError::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    msg: "bad residual".into(),
                })?);
            series.finals.push(fields[2].parse().unwrap_or(f64::NAN));
            series.inliers.push(fields[3] == "1");
        }
        Ok(series)
    }
}

/// Trajectory overlay rows: reference pose and the sensor pose mapped into
/// the reference frame under the estimated calibration, first-pose aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlaySeries {
    /// Shared grid timestamps.
    pub t: Vec<f64>,
    /// Reference positions.
    pub reference: Vec<[f64; 2]>,
    /// Mapped sensor positions.
    pub mapped: Vec<[f64; 2]>,
}

impl OverlaySeries {
    /// Writes the `t,ref_x,ref_y,sensor_x,sensor_y` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<(), PipelineError> {
        let mut out = csv_writer(path)?;
        writeln!(out, "t,ref_x,ref_y,sensor_x,sensor_y").map_err(io_err(path))?;
        for ((t, r), m) in self.t.iter().zip(&self.reference).zip(&self.mapped) {
            writeln!(out, "{},{},{},{},{}", t, r[0], r[1], m[0], m[1]).map_err(io_err(path))?;
        }
        Ok(())
    }
}

/// Writes the standalone inlier-mask CSV (`index,inlier`).
pub fn write_inlier_mask(path: &Path, mask: &[bool]) -> Result<(), PipelineError> {
    let mut out = csv_writer(path)?;
    writeln!(out, "index,inlier").map_err(io_err(path))?;
    for (k, keep) in mask.iter().enumerate() {
        writeln!(out, "{},{}", k, u8::from(*keep)).map_err(io_err(path))?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    let file = std::fs::File::create(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(std::io::BufWriter::new(file))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_series_round_trips_and_rms_matches() {
        let series = ResidualSeries {
            initial: vec![0.01, 0.5, 0.02],
            finals: vec![0.005, 0.51, 0.015],
            inliers: vec![true, false, true],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("residuals.csv");
        series.write_csv(&path).unwrap();
        let back = ResidualSeries::read_csv(&path).unwrap();
        assert_eq!(series, back);
        let rms = ResidualSeries::rms_over_inliers(&back.initial, &back.inliers);
        let expected = ((0.01f64.powi(2) + 0.02f64.powi(2)) / 2.0).sqrt();
        assert!((rms - expected).abs() < 1e-15);
    }
}
