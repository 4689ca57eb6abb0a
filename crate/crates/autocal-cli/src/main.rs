//! `calibrate`: batch extrinsic calibration of multiple robot sensors from
//! per-sensor trajectories and ground-plane observations.

use autocal_cli::pipeline::{load_inputs, run_pipeline, PipelineError};
use autocal_cli::report::SensorStatus;
use autocal_cli::{config::PipelineConfig, simulate};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "calibrate",
    version,
    about = "Multi-sensor extrinsic calibration from egomotion and ground-plane observations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full calibration pipeline described by a config file.
    Run {
        /// Pipeline config (TOML).
        config: PathBuf,
    },
    /// Parse and validate a config and its data files without solving.
    Check {
        /// Pipeline config (TOML).
        config: PathBuf,
    },
    /// Generate simulation fixtures (trajectories, ground points, a
    /// ready-to-run pipeline config and the ground truth).
    Simulate {
        /// Simulation config (TOML).
        config: PathBuf,
        /// Output directory for the fixture files.
        #[arg(long, default_value = "sim_fixtures")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter("CALIBRATE_LOG")
            .default_filter_or("warn"),
    )
    .init();

    match Cli::parse().command {
        Command::Run { config } => run(&config),
        Command::Check { config } => check(&config),
        Command::Simulate { config, out } => generate(&config, &out),
    }
}

fn fail(err: &PipelineError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(1)
}

fn run(config_path: &Path) -> ExitCode {
    let cfg = match PipelineConfig::load(config_path) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e),
    };
    let report = match run_pipeline(&cfg) {
        Ok(report) => report,
        Err(e) => return fail(&e),
    };
    for sensor in &report.sensors {
        match &sensor.status {
            SensorStatus::Calibrated => {
                let mut line = format!("{}: calibrated", sensor.id);
                if let Some(p) = &sensor.planar {
                    line.push_str(&format!(
                        " (x={:.4}, y={:.4}, yaw={:.4} rad, scale={:.4})",
                        p.x, p.y, p.theta, p.scale
                    ));
                }
                println!("{line}");
            }
            SensorStatus::Failed { reason } => println!("{}: FAILED ({reason})", sensor.id),
        }
    }
    println!(
        "report written to {}",
        cfg.output_dir.join("report.json").display()
    );
    if report.any_failed() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn check(config_path: &Path) -> ExitCode {
    let cfg = match PipelineConfig::load(config_path) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e),
    };
    match load_inputs(&cfg) {
        Ok(loaded) => {
            for sensor in &loaded {
                let points = sensor
                    .points
                    .as_ref()
                    .map(|p| format!(", {} ground points", p.len()))
                    .unwrap_or_default();
                let samples = match &sensor.data {
                    autocal_cli::pipeline::SensorData::Planar(t) => t.len(),
                    autocal_cli::pipeline::SensorData::Spatial(t) => t.len(),
                };
                println!("{}: ok ({samples} poses{points})", sensor.entry.id);
            }
            println!("config ok");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn generate(config_path: &Path, out: &Path) -> ExitCode {
    let cfg = match simulate::load_sim_config(config_path) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e),
    };
    match simulate::write_fixtures(&cfg, out) {
        Ok(paths) => {
            println!("fixtures written to {}", out.display());
            println!("pipeline config: {}", paths.pipeline_config.display());
            println!("ground truth: {}", paths.ground_truth.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
