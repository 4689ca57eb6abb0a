//! The batch calibration pipeline: ingest, ground alignment, projection,
//! synchronization, robust planar solve, joint refinement, reporting.
//!
//! Sensor-level failures (degenerate trajectories, missing overlap) do not
//! abort the run: the sensor is flagged in the report and the process exit
//! status becomes 2. I/O and parse failures abort with exit status 1.

use crate::config::{PipelineConfig, SensorEntry};
use crate::report::{
    write_inlier_mask, CalibrationReport, GroundReport, InitialPlanar, OverlaySeries, PlanarReport,
    ResidualSeries, SensorReport, SensorStatus,
};
use autocal_core::geom::{Pose2, Pose3, Sim2};
use autocal_core::ground::{project_trajectory, solve_ground_alignment, GroundSolution};
use autocal_core::joint::{joint_refine, CrossObservations, JointProblem, Loss, LossForm};
use autocal_core::robust::{ransac_pairwise, translation_error, RobustEstimate};
use autocal_core::sim::SensorKind;
use autocal_core::sync::{incremental_motion, interpolate_pose, MotionPair};
use autocal_core::{CalibError, RansacConfig, Trajectory2, WeightedPoint3};
use std::path::PathBuf;

/// Pipeline-level errors (abort the run; sensor-level problems go into the
/// report instead).
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    /// A data or config file could not be parsed.
    #[error("{path}:{line}: {msg}")]
    Parse {
        /// Offending file.
        path: PathBuf,
        /// 1-based line (0 when the location is file-wide).
        line: usize,
        /// Description.
        msg: String,
    },
    /// A file could not be read or written.
    #[error("{path}: {source}")]
    Io {
        /// Offending path.
        path: PathBuf,
        /// Underlying error.
        source: std::io::Error,
    },
    /// The configuration is structurally invalid.
    #[error("config error: {0}")]
    Config(String),
    /// A solver error escaped sensor-level containment.
    #[error(transparent)]
    Calib(#[from] CalibError),
}

/// Trajectory payload of one sensor.
#[derive(Debug, Clone)]
pub enum SensorData {
    /// Planar `t x y theta` trajectory.
    Planar(Trajectory2),
    /// 6DoF trajectory.
    Spatial(Vec<(f64, Pose3)>),
}

/// One sensor's files, loaded.
#[derive(Debug, Clone)]
pub struct LoadedSensor {
    /// The config entry.
    pub entry: SensorEntry,
    /// Trajectory data.
    pub data: SensorData,
    /// Ground observations, when configured.
    pub points: Option<Vec<WeightedPoint3>>,
}

/// Loads one sensor's files according to its kind.
pub fn load_sensor(entry: &SensorEntry) -> Result<LoadedSensor, PipelineError> {
    let data = match entry.kind {
        SensorKind::Metric2d => {
            SensorData::Planar(crate::io::load_planar_trajectory(&entry.trajectory)?)
        }
        SensorKind::Metric3d | SensorKind::Monocular3d => {
            SensorData::Spatial(crate::io::load_six_dof_trajectory(&entry.trajectory)?)
        }
    };
    let points = entry
        .ground_points
        .as_ref()
        .map(|p| crate::io::load_points(p))
        .transpose()?;
    Ok(LoadedSensor {
        entry: entry.clone(),
        data,
        points,
    })
}

/// Loads every sensor of the config.
pub fn load_inputs(cfg: &PipelineConfig) -> Result<Vec<LoadedSensor>, PipelineError> {
    cfg.sensors.iter().map(load_sensor).collect()
}

/// Pipeline step 3 + 4a for one sensor: align to the ground plane if the
/// sensor is 3D, then produce its planar trajectory. Planar sensors skip
/// the coplanarity stage (unobservable for them) and pass through.
pub fn project_sensor(
    sensor: &LoadedSensor,
) -> Result<(Trajectory2, Option<GroundSolution>), CalibError> {
    match &sensor.data {
        SensorData::Planar(traj) => Ok((traj.clone(), None)),
        SensorData::Spatial(traj3) => {
            let points = sensor.points.as_deref().ok_or_else(|| {
                CalibError::InsufficientData(format!(
                    "sensor '{}' has no ground observations",
                    sensor.entry.id
                ))
            })?;
            let ground = solve_ground_alignment(points)?;
            let projected = project_trajectory(&ground.alignment, traj3)?;
            Ok((projected, Some(ground)))
        }
    }
}

/// The shared synchronization grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncGrid {
    /// Time-base sample times inside the common overlap window.
    pub timestamps: Vec<f64>,
    /// Time-base samples dropped by the overlap trimming.
    pub dropped: usize,
}

/// Clips the time-base sample times to a window.
pub fn grid_in_window(time_base: &Trajectory2, lo: f64, hi: f64) -> SyncGrid {
    let timestamps: Vec<f64> = time_base
        .samples()
        .iter()
        .map(|s| s.t)
        .filter(|t| *t >= lo && *t <= hi)
        .collect();
    SyncGrid {
        dropped: time_base.len() - timestamps.len(),
        timestamps,
    }
}

/// Interpolated poses and incremental motions of a trajectory on the grid.
pub fn motions_on_grid(
    traj: &Trajectory2,
    grid: &[f64],
) -> Result<(Vec<Pose2>, Vec<Pose2>), CalibError> {
    let poses: Vec<Pose2> = grid
        .iter()
        .map(|t| interpolate_pose(traj, *t))
        .collect::<Result<_, _>>()?;
    let motions = poses
        .windows(2)
        .map(|w| incremental_motion(&w[0], &w[1]))
        .collect();
    Ok((poses, motions))
}

/// Zips two synchronous motion sequences into pairs.
pub fn pairs_from_motions(reference: &[Pose2], other: &[Pose2]) -> Vec<MotionPair> {
    reference
        .iter()
        .zip(other)
        .enumerate()
        .map(|(k, (r, o))| MotionPair::new(*r, *o, k))
        .collect()
}

#[derive(Debug, Default)]
struct SensorWork {
    ground: Option<GroundSolution>,
    trajectory: Option<Trajectory2>,
    poses: Vec<Pose2>,
    motions: Vec<Pose2>,
    robust: Option<RobustEstimate>,
    final_params: Option<Sim2>,
    warnings: Vec<String>,
    failure: Option<String>,
}

impl SensorWork {
    fn fail(&mut self, reason: impl Into<String>) {
        if self.failure.is_none() {
            self.failure = Some(reason.into());
        }
    }

    fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

fn rms_translation_error(params: &Sim2, pairs: &[MotionPair], mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pair, keep) in pairs.iter().zip(mask) {
        if *keep {
            sum += translation_error(params, pair).norm_squared();
            n += 1;
        }
    }
    (sum / n.max(1) as f64).sqrt()
}

/// Result of [`execute`]: the report plus the plot-data series backing it.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// The calibration report.
    pub report: CalibrationReport,
    /// Per-sensor `(sensor index, residual series, overlay)`.
    pub series: Vec<(usize, ResidualSeries, OverlaySeries)>,
}

/// Runs the full pipeline and writes the report plus plot-data files into
/// the configured output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<CalibrationReport, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let loaded = load_inputs(cfg)?;
    let output = execute(cfg, &loaded)?;
    write_outputs(cfg, &loaded, &output)?;
    Ok(output.report)
}

/// Runs the computation stages without touching the output directory.
pub fn execute(
    cfg: &PipelineConfig,
    loaded: &[LoadedSensor],
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let n = loaded.len();
    let ref_idx = cfg
        .sensor_index(&cfg.reference)
        .expect("validated reference id");
    let mut work: Vec<SensorWork> = (0..n).map(|_| SensorWork::default()).collect();

    // Stage 3 + 4a: ground alignment and projection, per sensor.
    for (i, sensor) in loaded.iter().enumerate() {
        match project_sensor(sensor) {
            Ok((traj, ground)) => {
                if let Some(g) = &ground {
                    if g.thin_margin {
                        work[i].warnings.push(format!(
                            "ground alignment close to degenerate (rank margin {:.3e})",
                            g.rank_margin
                        ));
                    }
                }
                work[i].trajectory = Some(traj);
                work[i].ground = ground;
            }
            Err(e) => {
                log::warn!("sensor '{}': {e}", sensor.entry.id);
                work[i].fail(e.to_string());
            }
        }
    }

    if !work[ref_idx].ok() {
        let reason = format!(
            "reference sensor '{}' failed: {}",
            cfg.reference,
            work[ref_idx].failure.clone().unwrap_or_default()
        );
        for (i, w) in work.iter_mut().enumerate() {
            if i != ref_idx {
                w.fail(&reason);
            }
        }
        return Ok(PipelineOutput {
            report: build_report(cfg, &work, &cfg.reference, 0),
            series: Vec::new(),
        });
    }

    // Time base: configured, or the lowest-rate sensor still standing.
    let time_base_idx = match &cfg.time_base {
        Some(id) => cfg.sensor_index(id).expect("validated time-base id"),
        None => {
            let mut best = ref_idx;
            let mut best_rate = f64::INFINITY;
            for (i, w) in work.iter().enumerate() {
                if let Some(t) = &w.trajectory {
                    if w.ok() && t.mean_rate() < best_rate {
                        best_rate = t.mean_rate();
                        best = i;
                    }
                }
            }
            best
        }
    };
    let time_base_id = loaded[time_base_idx].entry.id.clone();
    if !work[time_base_idx].ok() {
        let reason = format!("time-base sensor '{time_base_id}' failed");
        for (i, w) in work.iter_mut().enumerate() {
            if i != ref_idx && i != time_base_idx {
                w.fail(&reason);
            }
        }
        return Ok(PipelineOutput {
            report: build_report(cfg, &work, &time_base_id, 0),
            series: Vec::new(),
        });
    }

    // Stage 4b: common overlap window and synchronization grid. A sensor
    // whose data would empty the window is dropped (in declaration order)
    // instead of starving everyone else.
    let tb_traj = work[time_base_idx].trajectory.clone().unwrap();
    let span = |w: &SensorWork| {
        let t = w.trajectory.as_ref().unwrap();
        (t.start_time(), t.end_time())
    };
    let (mut lo, mut hi) = span(&work[time_base_idx]);
    {
        let (rlo, rhi) = span(&work[ref_idx]);
        lo = lo.max(rlo);
        hi = hi.min(rhi);
    }
    if grid_in_window(&tb_traj, lo, hi).timestamps.len() < 2 {
        let reason = "no temporal overlap between reference and time base".to_string();
        for (i, w) in work.iter_mut().enumerate() {
            if i != ref_idx {
                w.fail(&reason);
            }
        }
        return Ok(PipelineOutput {
            report: build_report(cfg, &work, &time_base_id, 0),
            series: Vec::new(),
        });
    }
    #[allow(clippy::needless_range_loop)] // the window state spans iterations
    for i in 0..n {
        if i == ref_idx || i == time_base_idx || !work[i].ok() {
            continue;
        }
        let (slo, shi) = span(&work[i]);
        let (clo, chi) = (lo.max(slo), hi.min(shi));
        if grid_in_window(&tb_traj, clo, chi).timestamps.len() < 2 {
            work[i].fail("no temporal overlap with the other sensors");
        } else {
            lo = clo;
            hi = chi;
        }
    }
    let grid = grid_in_window(&tb_traj, lo, hi);

    // Interpolate every surviving sensor on the grid.
    for w in work.iter_mut() {
        if !w.ok() {
            continue;
        }
        let traj = w.trajectory.as_ref().unwrap();
        match motions_on_grid(traj, &grid.timestamps) {
            Ok((poses, motions)) => {
                w.poses = poses;
                w.motions = motions;
            }
            Err(e) => w.fail(e.to_string()),
        }
    }
    if !work[ref_idx].ok() {
        return Ok(PipelineOutput {
            report: build_report(cfg, &work, &time_base_id, grid.dropped),
            series: Vec::new(),
        });
    }

    // Stage 5: RANSAC + closed form per non-reference sensor.
    let ransac_cfg = RansacConfig::from(cfg.ransac);
    let ref_motions = work[ref_idx].motions.clone();
    for (i, w) in work.iter_mut().enumerate() {
        if i == ref_idx || !w.ok() {
            continue;
        }
        let pairs = pairs_from_motions(&ref_motions, &w.motions);
        match ransac_pairwise(&pairs, &ransac_cfg) {
            Ok(est) => {
                w.final_params = Some(est.params);
                w.robust = Some(est);
            }
            Err(e) => {
                log::warn!("sensor '{}': {e}", loaded[i].entry.id);
                w.fail(e.to_string());
            }
        }
    }

    // Stage 6: joint refinement over the sensors that made it this far.
    let solved: Vec<usize> = (0..n)
        .filter(|&i| i != ref_idx && work[i].ok() && work[i].robust.is_some())
        .collect();
    let mut joint_ran = false;
    if cfg.joint.enabled && !solved.is_empty() {
        let problem = build_joint_problem(cfg, loaded, &work, &ref_motions, &solved);
        match joint_refine(&problem) {
            Ok((refined, _trace)) => {
                joint_ran = true;
                for (slot, &i) in solved.iter().enumerate() {
                    work[i].final_params = Some(refined[slot]);
                }
            }
            Err(e) => {
                log::warn!("joint refinement made no progress: {e}");
                for &i in &solved {
                    work[i]
                        .warnings
                        .push(format!("joint refinement kept the initial estimate: {e}"));
                }
            }
        }
    }

    let mut report = build_report(cfg, &work, &time_base_id, grid.dropped);
    fill_planar_sections(cfg, &work, &ref_motions, joint_ran, &mut report);
    let series = build_series(cfg, &work, &ref_motions, &grid.timestamps);
    Ok(PipelineOutput { report, series })
}

fn build_joint_problem(
    cfg: &PipelineConfig,
    loaded: &[LoadedSensor],
    work: &[SensorWork],
    ref_motions: &[Pose2],
    solved: &[usize],
) -> JointProblem {
    let mut reference_obs = Vec::new();
    let mut initial = Vec::new();
    let mut metric = vec![true];
    for &i in solved {
        let est = work[i].robust.as_ref().unwrap();
        let pairs = pairs_from_motions(ref_motions, &work[i].motions);
        let inliers: Vec<MotionPair> = pairs
            .iter()
            .zip(&est.inlier_mask)
            .filter(|(_, &k)| k)
            .map(|(p, _)| *p)
            .collect();
        reference_obs.push(inliers);
        initial.push(est.params);
        metric.push(loaded[i].entry.kind.is_metric());
    }
    let mut cross_obs = Vec::new();
    for [first, second] in &cfg.joint.extra_pairs {
        let fi = cfg.sensor_index(first).unwrap();
        let si = cfg.sensor_index(second).unwrap();
        let (Some(a), Some(b)) = (
            solved.iter().position(|&i| i == fi),
            solved.iter().position(|&i| i == si),
        ) else {
            log::warn!("extra pair ({first}, {second}) skipped: sensor unavailable");
            continue;
        };
        let mask_a = &work[fi].robust.as_ref().unwrap().inlier_mask;
        let mask_b = &work[si].robust.as_ref().unwrap().inlier_mask;
        let pairs: Vec<MotionPair> = work[fi]
            .motions
            .iter()
            .zip(&work[si].motions)
            .enumerate()
            .filter(|(k, _)| mask_a[*k] && mask_b[*k])
            .map(|(k, (p, q))| MotionPair::new(*p, *q, k))
            .collect();
        if pairs.is_empty() {
            log::warn!("extra pair ({first}, {second}) skipped: no shared inliers");
            continue;
        }
        cross_obs.push(CrossObservations {
            i: a + 1,
            j: b + 1,
            pairs,
        });
    }
    JointProblem {
        n_sensors: solved.len() + 1,
        reference_obs,
        cross_obs,
        metric,
        initial,
        loss: Loss::Cauchy {
            scale: cfg.loss_scale(),
        },
        loss_form: if cfg.joint.componentwise_loss {
            LossForm::Componentwise
        } else {
            LossForm::OnSquaredNorm
        },
    }
}

fn build_report(
    cfg: &PipelineConfig,
    work: &[SensorWork],
    time_base_id: &str,
    dropped: usize,
) -> CalibrationReport {
    let sensors = cfg
        .sensors
        .iter()
        .zip(work)
        .map(|(entry, w)| SensorReport {
            id: entry.id.clone(),
            kind: entry.kind,
            status: match &w.failure {
                None => SensorStatus::Calibrated,
                Some(reason) => SensorStatus::Failed {
                    reason: reason.clone(),
                },
            },
            planar: None,
            ground: w.ground.as_ref().map(|g| GroundReport {
                z: g.alignment.z(),
                alpha: g.alignment.alpha(),
                beta: g.alignment.beta(),
                metric_z: None,
                rms_residual: g.rms_residual,
                points: g.n_points,
                warnings: w.warnings.clone(),
            }),
        })
        .collect();
    CalibrationReport {
        tool: "calibrate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        generated_at: unix_timestamp(),
        conventions: crate::report::FRAME_CONVENTIONS.into(),
        reference: cfg.reference.clone(),
        time_base: time_base_id.to_string(),
        dropped_time_base_samples: dropped,
        config: cfg.clone(),
        sensors,
    }
}

fn fill_planar_sections(
    cfg: &PipelineConfig,
    work: &[SensorWork],
    ref_motions: &[Pose2],
    joint_ran: bool,
    report: &mut CalibrationReport,
) {
    let ref_idx = cfg.sensor_index(&cfg.reference).unwrap();
    for (i, w) in work.iter().enumerate() {
        if i == ref_idx {
            // The reference frame is the output frame; only the ground
            // alignment is reported for it, already in metric units.
            if let (Some(g), Some(section)) = (&w.ground, report.sensors[i].ground.as_mut()) {
                section.metric_z = Some(g.alignment.z());
            }
            continue;
        }
        let (Some(est), Some(final_params)) = (&w.robust, &w.final_params) else {
            continue;
        };
        let pairs = pairs_from_motions(ref_motions, &w.motions);
        let rms_before = rms_translation_error(&est.params, &pairs, &est.inlier_mask);
        let rms_after =
            joint_ran.then(|| rms_translation_error(final_params, &pairs, &est.inlier_mask));
        report.sensors[i].planar = Some(PlanarReport {
            x: final_params.x(),
            y: final_params.y(),
            theta: final_params.theta(),
            scale: final_params.scale(),
            metric_lever_arm: [
                final_params.metric_lever_arm().x,
                final_params.metric_lever_arm().y,
            ],
            initial: InitialPlanar {
                x: est.params.x(),
                y: est.params.y(),
                theta: est.params.theta(),
                scale: est.params.scale(),
            },
            inliers: est.inlier_count(),
            total_pairs: pairs.len(),
            ransac_iterations: est.iterations_run,
            rms_before_refine: rms_before,
            rms_after_refine: rms_after,
            warnings: w.warnings.clone(),
        });
        if let Some(section) = report.sensors[i].ground.as_mut() {
            section.metric_z = Some(final_params.scale() * section.z);
        }
    }
}

fn build_series(
    cfg: &PipelineConfig,
    work: &[SensorWork],
    ref_motions: &[Pose2],
    grid: &[f64],
) -> Vec<(usize, ResidualSeries, OverlaySeries)> {
    let ref_idx = cfg.sensor_index(&cfg.reference).unwrap();
    let ref_poses = &work[ref_idx].poses;
    let mut out = Vec::new();
    for (i, w) in work.iter().enumerate() {
        if i == ref_idx {
            continue;
        }
        let (Some(est), Some(final_params)) = (&w.robust, &w.final_params) else {
            continue;
        };
        let pairs = pairs_from_motions(ref_motions, &w.motions);
        let residuals = ResidualSeries {
            initial: pairs
                .iter()
                .map(|p| translation_error(&est.params, p).norm())
                .collect(),
            finals: pairs
                .iter()
                .map(|p| translation_error(final_params, p).norm())
                .collect(),
            inliers: est.inlier_mask.clone(),
        };

        // Overlay: sensor poses mapped into the reference frame under the
        // estimated calibration, first grid pose aligned.
        let inv = final_params.inverse();
        let mapped_raw: Vec<Pose2> = w
            .poses
            .iter()
            .map(|q| {
                let m = Sim2::from(*q).compose(&inv);
                Pose2::new(m.x(), m.y(), m.theta())
            })
            .collect();
        let align = ref_poses[0].compose(&mapped_raw[0].inverse());
        let overlay = OverlaySeries {
            t: grid.to_vec(),
            reference: ref_poses.iter().map(|p| [p.x(), p.y()]).collect(),
            mapped: mapped_raw
                .iter()
                .map(|p| {
                    let a = align.compose(p);
                    [a.x(), a.y()]
                })
                .collect(),
        };
        out.push((i, residuals, overlay));
    }
    out
}

/// Writes the report and the plot-data files (residual series, trajectory
/// overlays, inlier masks) into the output directory.
pub fn write_outputs(
    cfg: &PipelineConfig,
    loaded: &[LoadedSensor],
    output: &PipelineOutput,
) -> Result<(), PipelineError> {
    output.report.write(&cfg.output_dir)?;
    for (i, residuals, overlay) in &output.series {
        let id = &loaded[*i].entry.id;
        residuals.write_csv(&cfg.output_dir.join(format!("{id}_residuals.csv")))?;
        overlay.write_csv(&cfg.output_dir.join(format!("{id}_overlay.csv")))?;
        write_inlier_mask(
            &cfg.output_dir.join(format!("{id}_inlier_mask.csv")),
            &residuals.inliers,
        )?;
    }
    Ok(())
}

fn unix_timestamp() -> String {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_else(|_| "0".into())
}
