//! Declarative pipeline configuration: a single TOML file describes the
//! sensors, their data files and the estimation settings. No interactive
//! prompts anywhere.

use autocal_core::sim::SensorKind;
use autocal_core::RansacConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One sensor entry of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorEntry {
    /// Unique identifier.
    pub id: String,
    /// Sensor category; decides the trajectory format and which stages run.
    pub kind: SensorKind,
    /// Trajectory file: `t x y theta` lines for planar sensors,
    /// `t tx ty tz qx qy qz qw` for 3D sensors.
    pub trajectory: PathBuf,
    /// Ground observations file (`x y z [w]` lines); required for 3D
    /// sensors, not accepted for planar ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_points: Option<PathBuf>,
}

/// Joint-refinement settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    /// Whether the joint refinement stage runs at all.
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Cauchy loss scale; defaults to the RANSAC threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_scale: Option<f64>,
    /// Apply the loss to the squared norm (default) or componentwise.
    #[serde(default)]
    pub componentwise_loss: bool,
    /// Extra cross-sensor constraint pairs `[first, second]`; the first
    /// sensor of each pair must provide metric motions and neither may be
    /// the reference.
    #[serde(default)]
    pub extra_pairs: Vec<[String; 2]>,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            loss_scale: None,
            componentwise_loss: false,
            extra_pairs: Vec::new(),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

/// The full pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Identifier of the reference sensor (must provide metric motions).
    pub reference: String,
    /// Identifier of the sensor providing the synchronization time base;
    /// defaults to the sensor with the lowest average sample rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_base: Option<String>,
    /// Directory receiving the report and plot-data files.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// RANSAC settings.
    #[serde(default)]
    pub ransac: RansacConfigToml,
    /// Joint-refinement settings.
    #[serde(default)]
    pub joint: JointConfig,
    /// The sensors, reference included.
    pub sensors: Vec<SensorEntry>,
}

/// Serde mirror of [`RansacConfig`] with per-field defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfigToml {
    /// Inlier threshold in meters.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Hypothesis budget.
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Minimal sample size.
    #[serde(default = "default_min_sample")]
    pub min_sample: usize,
    /// RNG seed.
    #[serde(default)]
    pub seed: u64,
    /// Early-exit confidence.
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_threshold() -> f64 {
    0.05
}
fn default_max_iterations() -> usize {
    1000
}
fn default_min_sample() -> usize {
    2
}
fn default_confidence() -> f64 {
    0.999
}

impl Default for RansacConfigToml {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            max_iterations: default_max_iterations(),
            min_sample: default_min_sample(),
            seed: 0,
            confidence: default_confidence(),
        }
    }
}

impl From<RansacConfigToml> for RansacConfig {
    fn from(t: RansacConfigToml) -> Self {
        RansacConfig {
            threshold: t.threshold,
            max_iterations: t.max_iterations,
            min_sample: t.min_sample,
            seed: t.seed,
            confidence: t.confidence,
        }
    }
}

impl PipelineConfig {
    /// Parses a config file and resolves its relative paths against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, crate::pipeline::PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| crate::pipeline::PipelineError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| crate::pipeline::PipelineError::Parse {
                path: path.to_path_buf(),
                line: e
                    .span()
                    .map(|s| text[..s.start].lines().count())
                    .unwrap_or(0),
                msg: e.message().to_string(),
            })?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()
            .map_err(crate::pipeline::PipelineError::Config)?;
        Ok(cfg)
    }

    /// Rebases relative paths onto `dir`.
    pub fn resolve_paths(&mut self, dir: &Path) {
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&p);
            }
        };
        for sensor in &mut self.sensors {
            rebase(&mut sensor.trajectory);
            if let Some(gp) = &mut sensor.ground_points {
                rebase(gp);
            }
        }
        rebase(&mut self.output_dir);
    }

    /// Structural validation (no file access).
    pub fn validate(&self) -> Result<(), String> {
        if self.sensors.len() < 2 {
            return Err(
                "nothing to calibrate: need the reference sensor plus at least one more"
                    .to_string(),
            );
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.sensors {
            if !seen.insert(s.id.as_str()) {
                return Err(format!("duplicate sensor id '{}'", s.id));
            }
            match s.kind {
                SensorKind::Metric2d => {
                    if s.ground_points.is_some() {
                        return Err(format!(
                            "sensor '{}': planar sensors cannot observe the ground plane; \
                             remove ground_points",
                            s.id
                        ));
                    }
                }
                SensorKind::Metric3d | SensorKind::Monocular3d => {
                    if s.ground_points.is_none() {
                        return Err(format!(
                            "sensor '{}': 3D sensors need ground_points to align to the plane",
                            s.id
                        ));
                    }
                }
            }
        }
        let reference = self
            .sensor(&self.reference)
            .ok_or_else(|| format!("reference sensor '{}' is not declared", self.reference))?;
        if !reference.kind.is_metric() {
            return Err(format!(
                "reference sensor '{}' must provide metric motions (metric2d or metric3d)",
                self.reference
            ));
        }
        if let Some(tb) = &self.time_base {
            if self.sensor(tb).is_none() {
                return Err(format!("time-base sensor '{tb}' is not declared"));
            }
        }
        for [first, second] in &self.joint.extra_pairs {
            let a = self
                .sensor(first)
                .ok_or_else(|| format!("extra pair sensor '{first}' is not declared"))?;
            if self.sensor(second).is_none() {
                return Err(format!("extra pair sensor '{second}' is not declared"));
            }
            if first == second {
                return Err(format!(
                    "extra pair ({first}, {second}) links a sensor to itself"
                ));
            }
            if first == &self.reference || second == &self.reference {
                return Err(format!(
                    "extra pair ({first}, {second}): pairs with the reference are implicit"
                ));
            }
            if !a.kind.is_metric() {
                return Err(format!(
                    "extra pair ({first}, {second}): first sensor must provide metric motions"
                ));
            }
        }
        if let Some(ls) = self.joint.loss_scale {
            if !(ls.is_finite() && ls > 0.0) {
                return Err(format!("joint loss_scale must be positive, got {ls}"));
            }
        }
        RansacConfig::from(self.ransac)
            .validate()
            .map_err(|e| e.to_string())?;
        Ok(())
    }

    /// Looks a sensor up by id.
    pub fn sensor(&self, id: &str) -> Option<&SensorEntry> {
        self.sensors.iter().find(|s| s.id == id)
    }

    /// Index of a sensor id in declaration order.
    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s.id == id)
    }

    /// The effective Cauchy loss scale.
    pub fn loss_scale(&self) -> f64 {
        self.joint.loss_scale.unwrap_or(self.ransac.threshold)
    }
}
