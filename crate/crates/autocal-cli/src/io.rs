//! Plain-text file formats for trajectories and ground observations.
//!
//! Planar trajectories: one `t x y theta` line per sample. 6DoF
//! trajectories: `t tx ty tz qx qy qz qw` with a Hamilton-convention unit
//! quaternion, scalar part last. Ground points: `x y z [w]`, comma or
//! whitespace separated, default weight 1. Lines starting with `#` are
//! comments. Timestamps must be strictly increasing.

use crate::pipeline::PipelineError;
use autocal_core::geom::{Pose2, Pose3};
use autocal_core::sync::TimedPose2;
use autocal_core::{Trajectory2, WeightedPoint3};
use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use std::io::Write;
use std::path::Path;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> PipelineError {
    PipelineError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn parse_fields(
    path: &Path,
    line_no: usize,
    line: &str,
    split_commas: bool,
) -> Result<Vec<f64>, PipelineError> {
    let cleaned;
    let text = if split_commas {
        cleaned = line.replace(',', " ");
        cleaned.as_str()
    } else {
        line
    };
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| parse_err(path, line_no, format!("invalid number '{tok}'")))
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(parse_err(
                            path,
                            line_no,
                            format!("non-finite value '{tok}'"),
                        ))
                    }
                })
        })
        .collect()
}

fn check_monotone(
    path: &Path,
    line_no: usize,
    prev: Option<f64>,
    t: f64,
) -> Result<(), PipelineError> {
    if let Some(p) = prev {
        if t <= p {
            return Err(parse_err(
                path,
                line_no,
                format!("timestamps must be strictly increasing ({p} then {t})"),
            ));
        }
    }
    Ok(())
}

/// Loads a planar trajectory (`t x y theta` lines).
pub fn load_planar_trajectory(path: &Path) -> Result<Trajectory2, PipelineError> {
    let mut samples = Vec::new();
    let mut prev_t = None;
    for (line_no, line) in read_lines(path)? {
        let f = parse_fields(path, line_no, &line, false)?;
        if f.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 4 fields 't x y theta', got {}", f.len()),
            ));
        }
        check_monotone(path, line_no, prev_t, f[0])?;
        prev_t = Some(f[0]);
        samples.push(TimedPose2::new(f[0], Pose2::new(f[1], f[2], f[3])));
    }
    Trajectory2::new(samples).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// Loads a 6DoF trajectory (`t tx ty tz qx qy qz qw` lines). Quaternions
/// whose norm is off by more than 1e-3 are rejected; smaller deviations
/// are renormalized.
pub fn load_six_dof_trajectory(path: &Path) -> Result<Vec<(f64, Pose3)>, PipelineError> {
    let mut samples = Vec::new();
    let mut prev_t = None;
    for (line_no, line) in read_lines(path)? {
        let f = parse_fields(path, line_no, &line, false)?;
        if f.len() != 8 {
            return Err(parse_err(
                path,
                line_no,
                format!(
                    "expected 8 fields 't tx ty tz qx qy qz qw', got {}",
                    f.len()
                ),
            ));
        }
        check_monotone(path, line_no, prev_t, f[0])?;
        prev_t = Some(f[0]);
        let q = Quaternion::new(f[7], f[4], f[5], f[6]);
        if (q.norm() - 1.0).abs() > 1e-3 {
            return Err(parse_err(
                path,
                line_no,
                format!("quaternion norm {} is not within 1e-3 of unit", q.norm()),
            ));
        }
        let rot = Rotation3::from(UnitQuaternion::from_quaternion(q));
        samples.push((f[0], Pose3::from_parts(rot, Vector3::new(f[1], f[2], f[3]))));
    }
    if samples.len() < 2 {
        return Err(parse_err(
            path,
            0,
            format!("trajectory needs at least 2 samples, got {}", samples.len()),
        ));
    }
    Ok(samples)
}

/// Loads ground observations (`x y z [w]` lines, comma or whitespace
/// separated; missing weight defaults to 1).
pub fn load_points(path: &Path) -> Result<Vec<WeightedPoint3>, PipelineError> {
    let mut points = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let f = parse_fields(path, line_no, &line, true)?;
        let (m, w) = match f.len() {
            3 => ([f[0], f[1], f[2]], 1.0),
            4 => ([f[0], f[1], f[2]], f[3]),
            n => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("expected 'x y z [w]', got {n} fields"),
                ))
            }
        };
        points
            .push(WeightedPoint3::new(m, w).map_err(|e| parse_err(path, line_no, e.to_string()))?);
    }
    Ok(points)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, PipelineError> {
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

/// Writes a planar trajectory in the `t x y theta` format.
pub fn write_planar_trajectory(path: &Path, traj: &Trajectory2) -> Result<(), PipelineError> {
    let mut out = create(path)?;
    writeln!(out, "# t x y theta").map_err(io_err(path))?;
    for s in traj.samples() {
        writeln!(
            out,
            "{} {} {} {}",
            s.t,
            s.pose.x(),
            s.pose.y(),
            s.pose.theta()
        )
        .map_err(io_err(path))?;
    }
    Ok(())
}

/// Writes a 6DoF trajectory in the `t tx ty tz qx qy qz qw` format.
pub fn write_six_dof_trajectory(path: &Path, traj: &[(f64, Pose3)]) -> Result<(), PipelineError> {
    let mut out = create(path)?;
    writeln!(out, "# t tx ty tz qx qy qz qw").map_err(io_err(path))?;
    for (t, pose) in traj {
        let q = UnitQuaternion::from_rotation_matrix(pose.rotation());
        let tr = pose.translation();
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            t, tr.x, tr.y, tr.z, q.i, q.j, q.k, q.w
        )
        .map_err(io_err(path))?;
    }
    Ok(())
}

/// Writes ground observations in the `x y z w` format.
pub fn write_points(path: &Path, points: &[WeightedPoint3]) -> Result<(), PipelineError> {
    let mut out = create(path)?;
    writeln!(out, "# x y z w").map_err(io_err(path))?;
    for p in points {
        writeln!(out, "{} {} {} {}", p.m[0], p.m[1], p.m[2], p.w).map_err(io_err(path))?;
    }
    Ok(())
}
