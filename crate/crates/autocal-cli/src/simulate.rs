//! Fixture generation: renders a simulated instance into the same file
//! formats the pipeline ingests, next to a ready-to-run pipeline config
//! and the ground truth for scoring.

use crate::config::{JointConfig, PipelineConfig, RansacConfigToml, SensorEntry};
use crate::pipeline::PipelineError;
use autocal_core::sim::{SensorKind, SimConfig, SimInstance};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Ground truth of one simulated sensor, written for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorTruth {
    /// Sensor id.
    pub id: String,
    /// Raw planar calibration: translation in sensor units.
    pub x: f64,
    /// Raw planar calibration y.
    pub y: f64,
    /// Yaw (radians).
    pub theta: f64,
    /// Scale factor (meters per sensor unit).
    pub scale: f64,
    /// Metric lever arm `scale * (x, y)`.
    pub metric_lever_arm: [f64; 2],
    /// Ground alignment in sensor units, when the sensor observes the
    /// plane: `(z, alpha, beta)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<[f64; 3]>,
    /// Metric height above the plane.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_z: Option<f64>,
}

/// Ground-truth file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    /// Seed the fixtures were generated from.
    pub seed: u64,
    /// Noise level of the instance.
    pub noise_level: f64,
    /// Per-sensor truth.
    pub sensors: Vec<SensorTruth>,
}

/// Paths written by [`write_fixtures`].
#[derive(Debug, Clone)]
pub struct FixturePaths {
    /// Ready-to-run pipeline config.
    pub pipeline_config: PathBuf,
    /// Ground truth JSON.
    pub ground_truth: PathBuf,
}

/// Identifier used for the synthesized reference odometer.
pub const REFERENCE_ID: &str = "odom";

/// Generates an instance and writes its fixture files into `dir`.
pub fn write_fixtures(cfg: &SimConfig, dir: &Path) -> Result<FixturePaths, PipelineError> {
    let instance = SimInstance::generate(cfg)?;
    write_instance_fixtures(&instance, dir)
}

/// Writes an already-generated instance into `dir`.
pub fn write_instance_fixtures(
    instance: &SimInstance,
    dir: &Path,
) -> Result<FixturePaths, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;

    // The config stores bare file names; loading it resolves them against
    // the config file's directory.
    let ref_name = PathBuf::from(format!("{REFERENCE_ID}.txt"));
    crate::io::write_planar_trajectory(&dir.join(&ref_name), &instance.reference_noisy)?;

    let mut entries = vec![SensorEntry {
        id: REFERENCE_ID.into(),
        kind: SensorKind::Metric2d,
        trajectory: ref_name,
        ground_points: None,
    }];
    let mut truths = Vec::new();
    for sensor in &instance.sensors {
        let traj_name = PathBuf::from(format!("{}.txt", sensor.spec.id));
        let traj_path = dir.join(&traj_name);
        let mut points_name = None;
        match (&sensor.noisy2, &sensor.noisy3) {
            (Some(traj2), None) => crate::io::write_planar_trajectory(&traj_path, traj2)?,
            (None, Some(traj3)) => crate::io::write_six_dof_trajectory(&traj_path, traj3)?,
            _ => unreachable!("a sensor is either planar or spatial"),
        }
        if let Some(points) = &sensor.ground_points {
            let name = PathBuf::from(format!("{}_points.txt", sensor.spec.id));
            crate::io::write_points(&dir.join(&name), points)?;
            points_name = Some(name);
        }
        entries.push(SensorEntry {
            id: sensor.spec.id.clone(),
            kind: sensor.spec.kind,
            trajectory: traj_name,
            ground_points: points_name,
        });
        truths.push(SensorTruth {
            id: sensor.spec.id.clone(),
            x: sensor.truth_x.x(),
            y: sensor.truth_x.y(),
            theta: sensor.truth_x.theta(),
            scale: sensor.truth_x.scale(),
            metric_lever_arm: [
                sensor.truth_x.metric_lever_arm().x,
                sensor.truth_x.metric_lever_arm().y,
            ],
            ground: sensor.truth_g.map(|g| [g.z(), g.alpha(), g.beta()]),
            metric_z: sensor.spec.ground.map(|g| g.z),
        });
    }

    let pipeline = PipelineConfig {
        reference: REFERENCE_ID.into(),
        time_base: None,
        output_dir: PathBuf::from("out"),
        ransac: RansacConfigToml {
            seed: instance.config.seed,
            ..RansacConfigToml::default()
        },
        joint: JointConfig::default(),
        sensors: entries,
    };
    let pipeline_config = dir.join("pipeline.toml");
    let toml_text = toml::to_string_pretty(&pipeline)
        .map_err(|e| PipelineError::Config(format!("could not serialize pipeline config: {e}")))?;
    std::fs::write(&pipeline_config, toml_text).map_err(|e| PipelineError::Io {
        path: pipeline_config.clone(),
        source: e,
    })?;

    let truth = GroundTruthFile {
        seed: instance.config.seed,
        noise_level: instance.config.noise_level,
        sensors: truths,
    };
    let ground_truth = dir.join("ground_truth.json");
    std::fs::write(
        &ground_truth,
        serde_json::to_string_pretty(&truth).expect("truth serializes"),
    )
    .map_err(|e| PipelineError::Io {
        path: ground_truth.clone(),
        source: e,
    })?;

    Ok(FixturePaths {
        pipeline_config,
        ground_truth,
    })
}

/// Parses a simulation config TOML.
pub fn load_sim_config(path: &Path) -> Result<SimConfig, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let cfg: SimConfig = toml::from_str(&text).map_err(|e| PipelineError::Parse {
        path: path.to_path_buf(),
        line: e
            .span()
            .map(|s| text[..s.start].lines().count())
            .unwrap_or(0),
        msg: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}
