//! End-to-end pipeline tests over generated fixtures: determinism, stage
//! independence, report self-consistency and the CLI exit-code contract.

use autocal_cli::config::PipelineConfig;
use autocal_cli::pipeline::{
    self, execute, load_inputs, motions_on_grid, pairs_from_motions, run_pipeline,
};
use autocal_cli::report::{CalibrationReport, ResidualSeries, SensorStatus};
use autocal_cli::simulate::{self, GroundTruthFile};
use autocal_core::robust::ransac_pairwise;
use autocal_core::sim::{GroundTruthGround, SensorKind, SimConfig, SimSensorSpec};
use autocal_core::{RansacConfig, Sim2};
use std::path::Path;
use std::process::Command;

fn two_sensor_sim(seed: u64, noise: f64) -> SimConfig {
    let mut cfg = SimConfig::default_two_sensor(seed, noise);
    cfg.n_laps = 2;
    cfg.samples_per_lap = 40;
    cfg
}

fn three_sensor_sim(seed: u64, noise: f64) -> SimConfig {
    let mut cfg = two_sensor_sim(seed, noise);
    cfg.sensors.push(SimSensorSpec {
        id: "lidar".into(),
        kind: SensorKind::Metric3d,
        lever_arm: [-0.2, 0.15],
        yaw: -0.8,
        recon_scale: 1.0,
        ground: Some(GroundTruthGround {
            z: 0.7,
            alpha: std::f64::consts::PI - 0.4,
            beta: -0.05,
        }),
    });
    cfg
}

fn fixture_config(dir: &Path, sim: &SimConfig) -> PipelineConfig {
    let paths = simulate::write_fixtures(sim, dir).unwrap();
    PipelineConfig::load(&paths.pipeline_config).unwrap()
}

#[test]
fn noise_free_pipeline_recovers_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), &two_sensor_sim(3, 0.0));
    let report = run_pipeline(&cfg).unwrap();
    assert!(!report.any_failed());

    let truth: GroundTruthFile = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("ground_truth.json")).unwrap(),
    )
    .unwrap();
    let cam_truth = &truth.sensors[0];
    let cam = report.sensors.iter().find(|s| s.id == "cam").unwrap();
    let planar = cam.planar.as_ref().unwrap();
    assert!((planar.metric_lever_arm[0] - cam_truth.metric_lever_arm[0]).abs() < 1e-6);
    assert!((planar.metric_lever_arm[1] - cam_truth.metric_lever_arm[1]).abs() < 1e-6);
    assert!((planar.theta - cam_truth.theta).abs() < 1e-8);
    assert!((planar.scale - cam_truth.scale).abs() / cam_truth.scale < 1e-8);
    let ground = cam.ground.as_ref().unwrap();
    assert!((ground.metric_z.unwrap() - cam_truth.metric_z.unwrap()).abs() < 1e-6);
}

#[test]
fn reports_are_deterministic_up_to_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), &two_sensor_sim(11, 1.0));
    let mut a = run_pipeline(&cfg).unwrap();
    let mut b = run_pipeline(&cfg).unwrap();
    a.generated_at = String::new();
    b.generated_at = String::new();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn report_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), &two_sensor_sim(13, 1.0));
    let report = run_pipeline(&cfg).unwrap();
    let back = CalibrationReport::from_json(&report.to_json()).unwrap();
    assert_eq!(report, back);

    // The written file parses back identically too.
    let written = std::fs::read_to_string(cfg.output_dir.join("report.json")).unwrap();
    assert_eq!(CalibrationReport::from_json(&written).unwrap(), report);
}

#[test]
fn residual_statistics_are_recomputable_from_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), &two_sensor_sim(17, 1.0));
    let report = run_pipeline(&cfg).unwrap();
    let cam = report.sensors.iter().find(|s| s.id == "cam").unwrap();
    let planar = cam.planar.as_ref().unwrap();

    let series = ResidualSeries::read_csv(&cfg.output_dir.join("cam_residuals.csv")).unwrap();
    assert_eq!(series.initial.len(), planar.total_pairs);
    assert_eq!(
        series.inliers.iter().filter(|&&b| b).count(),
        planar.inliers
    );
    let rms_before = ResidualSeries::rms_over_inliers(&series.initial, &series.inliers);
    assert!((rms_before - planar.rms_before_refine).abs() < 1e-12);
    let rms_after = ResidualSeries::rms_over_inliers(&series.finals, &series.inliers);
    assert!((rms_after - planar.rms_after_refine.unwrap()).abs() < 1e-12);

    // Overlay rows cover the same grid (one more row than motions).
    let overlay = std::fs::read_to_string(cfg.output_dir.join("cam_overlay.csv")).unwrap();
    assert_eq!(overlay.lines().count() - 1, planar.total_pairs + 1);
}

#[test]
fn stages_compose_to_the_pipeline_result() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), &two_sensor_sim(19, 1.0));
    let loaded = load_inputs(&cfg).unwrap();
    let report = execute(&cfg, &loaded).unwrap().report;

    // Manual stage composition.
    let ref_sensor = loaded.iter().find(|s| s.entry.id == "odom").unwrap();
    let cam_sensor = loaded.iter().find(|s| s.entry.id == "cam").unwrap();
    let (ref_traj, _) = pipeline::project_sensor(ref_sensor).unwrap();
    let (cam_traj, cam_ground) = pipeline::project_sensor(cam_sensor).unwrap();

    let lo = ref_traj.start_time().max(cam_traj.start_time());
    let hi = ref_traj.end_time().min(cam_traj.end_time());
    let grid = pipeline::grid_in_window(&ref_traj, lo, hi);
    let (_, ref_motions) = motions_on_grid(&ref_traj, &grid.timestamps).unwrap();
    let (_, cam_motions) = motions_on_grid(&cam_traj, &grid.timestamps).unwrap();
    let pairs = pairs_from_motions(&ref_motions, &cam_motions);
    let est = ransac_pairwise(&pairs, &RansacConfig::from(cfg.ransac)).unwrap();

    let cam = report.sensors.iter().find(|s| s.id == "cam").unwrap();
    let planar = cam.planar.as_ref().unwrap();
    assert!((planar.initial.x - est.params.x()).abs() < 1e-12);
    assert!((planar.initial.y - est.params.y()).abs() < 1e-12);
    assert!((planar.initial.theta - est.params.theta()).abs() < 1e-12);
    assert!((planar.initial.scale - est.params.scale()).abs() < 1e-12);
    let ground = cam.ground.as_ref().unwrap();
    assert!((ground.z - cam_ground.unwrap().alignment.z()).abs() < 1e-12);
}

#[test]
fn planar_sensor_skips_ground_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = two_sensor_sim(23, 0.5);
    sim.sensors[0] = SimSensorSpec {
        id: "laser".into(),
        kind: SensorKind::Metric2d,
        lever_arm: [0.22, 0.0],
        yaw: 1.3,
        recon_scale: 1.0,
        ground: None,
    };
    let cfg = fixture_config(dir.path(), &sim);
    let report = run_pipeline(&cfg).unwrap();
    let laser = report.sensors.iter().find(|s| s.id == "laser").unwrap();
    assert!(matches!(laser.status, SensorStatus::Calibrated));
    assert!(laser.ground.is_none());
    let planar = laser.planar.as_ref().unwrap();
    // The scale is still estimated for metric sensors; with noisy motions
    // it lands near one rather than exactly on it.
    assert!((planar.scale - 1.0).abs() < 0.02, "scale {}", planar.scale);
    assert!((planar.x - 0.22).abs() < 0.05, "x {}", planar.x);
}

#[test]
fn three_sensor_run_with_cross_pair() {
    let dir = tempfile::tempdir().unwrap();
    let sim = three_sensor_sim(29, 1.0);
    let paths = simulate::write_fixtures(&sim, dir.path()).unwrap();
    let mut cfg = PipelineConfig::load(&paths.pipeline_config).unwrap();
    // lidar provides metric motions, so (lidar, cam) is admissible.
    cfg.joint.extra_pairs = vec![["lidar".into(), "cam".into()]];
    cfg.validate().unwrap();
    let report = run_pipeline(&cfg).unwrap();
    assert!(!report.any_failed());
    for id in ["cam", "lidar"] {
        let sensor = report.sensors.iter().find(|s| s.id == id).unwrap();
        assert!(sensor.planar.is_some(), "{id} missing planar results");
    }
}

#[test]
fn degenerate_ground_points_flag_the_sensor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = {
        let sim = two_sensor_sim(31, 0.0);
        let paths = simulate::write_fixtures(&sim, dir.path()).unwrap();
        // Corrupt the camera points with a collinear set.
        let mut lines = String::from("# x y z w\n");
        for k in 0..100 {
            lines.push_str(&format!("{} 0 -1 1\n", k as f64 * 0.01));
        }
        std::fs::write(dir.path().join("cam_points.txt"), lines).unwrap();
        paths.pipeline_config
    };
    let cfg = PipelineConfig::load(&cfg_path).unwrap();
    let report = run_pipeline(&cfg).unwrap();
    let cam = report.sensors.iter().find(|s| s.id == "cam").unwrap();
    match &cam.status {
        SensorStatus::Failed { reason } => {
            assert!(
                reason.contains("collinear") || reason.contains("constrain"),
                "{reason}"
            )
        }
        other => panic!("expected failure, got {other:?}"),
    }
    assert!(report.any_failed());
}

fn calibrate_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_calibrate"))
}

#[test]
fn cli_exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let sim = two_sensor_sim(37, 0.0);
    let paths = simulate::write_fixtures(&sim, dir.path()).unwrap();

    // Successful run: exit 0.
    let out = calibrate_bin()
        .args(["run", paths.pipeline_config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");

    // Parse failure in a data file: exit 1 with file and line.
    std::fs::write(dir.path().join("odom.txt"), "0 0 0 0\nbroken line\n").unwrap();
    let out = calibrate_bin()
        .args(["run", paths.pipeline_config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("odom.txt:2"), "{stderr}");

    // Missing config: exit 1.
    let out = calibrate_bin()
        .args(["run", dir.path().join("nope.toml").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cli_reports_degenerate_sensor_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let sim = two_sensor_sim(41, 0.0);
    let paths = simulate::write_fixtures(&sim, dir.path()).unwrap();
    let mut lines = String::from("# x y z w\n");
    for k in 0..50 {
        lines.push_str(&format!("{} 0 -1 1\n", k as f64 * 0.01));
    }
    std::fs::write(dir.path().join("cam_points.txt"), lines).unwrap();

    let out = calibrate_bin()
        .args(["run", paths.pipeline_config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAILED"), "{stdout}");
}

#[test]
fn cli_rejects_single_sensor_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("solo.toml");
    std::fs::write(
        &config,
        r#"
reference = "odom"
[[sensors]]
id = "odom"
kind = "metric2d"
trajectory = "odom.txt"
"#,
    )
    .unwrap();
    let out = calibrate_bin()
        .args(["check", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to calibrate"));
}

#[test]
fn configured_time_base_drives_the_grid() {
    // Indoor-style setup: the camera keyframes provide the time reference
    // and the (higher-rate) odometry is interpolated at them.
    let dir = tempfile::tempdir().unwrap();
    let truth = Sim2::new(0.3, -0.1, 0.25, 1.0);
    let path = |t: f64| (t * 0.4, (t * 0.3).sin(), 0.38 + 0.09 * (t * 0.3).cos());
    let mut odom_lines = String::new();
    for k in 0..=300 {
        let t = k as f64 * 0.1;
        let (x, y, th) = path(t);
        odom_lines.push_str(&format!("{t} {x} {y} {th}\n"));
    }
    let mut cam_lines = String::new();
    for k in 0..=60 {
        let t = k as f64 * 0.5;
        let (x, y, th) = path(t);
        let pose = autocal_core::geom::Sim2::from(autocal_core::geom::Pose2::new(x, y, th))
            .compose(&truth);
        cam_lines.push_str(&format!("{t} {} {} {}\n", pose.x(), pose.y(), pose.theta()));
    }
    std::fs::write(dir.path().join("odom.txt"), odom_lines).unwrap();
    std::fs::write(dir.path().join("cam.txt"), cam_lines).unwrap();
    std::fs::write(
        dir.path().join("cfg.toml"),
        r#"
reference = "odom"
time_base = "cam"
output_dir = "out"
[[sensors]]
id = "odom"
kind = "metric2d"
trajectory = "odom.txt"
[[sensors]]
id = "cam"
kind = "metric2d"
trajectory = "cam.txt"
"#,
    )
    .unwrap();
    let cfg = PipelineConfig::load(&dir.path().join("cfg.toml")).unwrap();
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.time_base, "cam");
    let cam = report.sensors.iter().find(|s| s.id == "cam").unwrap();
    let planar = cam.planar.as_ref().unwrap();
    // One pair per camera keyframe interval.
    assert_eq!(planar.total_pairs, 60);
    assert!((planar.x - truth.x()).abs() < 1e-3);
    assert!((planar.theta - truth.theta()).abs() < 1e-3);
}

#[test]
fn mixed_rates_use_the_low_rate_stream_as_time_base() {
    // Vehicle poses at 1 Hz, camera at 7.5 Hz: the default time base is
    // the slower stream.
    let dir = tempfile::tempdir().unwrap();
    let truth = Sim2::new(0.3, -0.1, 0.25, 1.0);
    let mut odom_lines = String::new();
    let mut cam_lines = String::new();
    let path = |t: f64| {
        // Smooth curved path with varying heading.
        let x = t * 0.4;
        let y = (t * 0.3).sin();
        let theta = 0.4f64.atan2(1.0) + 0.3 * (t * 0.3).cos() * 0.3;
        (x, y, theta)
    };
    for k in 0..=30 {
        let t = k as f64;
        let (x, y, th) = path(t);
        odom_lines.push_str(&format!("{t} {x} {y} {th}\n"));
    }
    for k in 0..=225 {
        let t = k as f64 / 7.5;
        let (x, y, th) = path(t);
        let pose = autocal_core::geom::Sim2::from(autocal_core::geom::Pose2::new(x, y, th))
            .compose(&truth);
        cam_lines.push_str(&format!("{t} {} {} {}\n", pose.x(), pose.y(), pose.theta()));
    }
    std::fs::write(dir.path().join("odom.txt"), odom_lines).unwrap();
    std::fs::write(dir.path().join("cam.txt"), cam_lines).unwrap();
    std::fs::write(
        dir.path().join("cfg.toml"),
        r#"
reference = "odom"
output_dir = "out"
[[sensors]]
id = "odom"
kind = "metric2d"
trajectory = "odom.txt"
[[sensors]]
id = "cam"
kind = "metric2d"
trajectory = "cam.txt"
"#,
    )
    .unwrap();
    let cfg = PipelineConfig::load(&dir.path().join("cfg.toml")).unwrap();
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.time_base, "odom");
    let cam = report.sensors.iter().find(|s| s.id == "cam").unwrap();
    let planar = cam.planar.as_ref().unwrap();
    assert_eq!(planar.total_pairs, 30);
    assert!((planar.x - truth.x()).abs() < 1e-3, "{}", planar.x);
    assert!((planar.theta - truth.theta()).abs() < 1e-3);
}
