//! Deterministic synthetic-data generator for validating the calibration
//! pipeline: eight-shaped reference paths, per-axis motion noise, scaled
//! monocular motions and noisy ground-plane reconstructions.
//!
//! Noise is injected on incremental motions (not poses) and every random
//! draw comes from a counter-based generator keyed on
//! `(seed, sensor, axis, index)`, so axis masks and generation order can
//! never reorder the streams: regenerating an instance from the same
//! config reproduces it bit for bit.

use crate::geom::{GroundAlignment, Pose2, Pose3, Sim2};
use crate::ground::{project_motion_to_plane, WeightedPoint3};
use crate::sync::{MotionPair, TimedPose2, Trajectory2};
use crate::CalibError;
use nalgebra::{Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Sensor category, which decides the trajectory dimensionality, the noise
/// axes and whether motions carry a reconstruction scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    /// Planar sensor with metric motions (odometer, 2D laser).
    Metric2d,
    /// 3D sensor with metric motions (3D lidar, stereo rig, RGB-D).
    Metric3d,
    /// 3D sensor with scale-ambiguous motions (monocular camera).
    Monocular3d,
}

impl SensorKind {
    /// Whether the sensor produces a 6DoF trajectory.
    pub fn is_3d(&self) -> bool {
        !matches!(self, SensorKind::Metric2d)
    }

    /// Whether the sensor's motions are metrically accurate.
    pub fn is_metric(&self) -> bool {
        !matches!(self, SensorKind::Monocular3d)
    }
}

/// Pinhole camera with square pixels used for the ground reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Image width in pixels.
    pub width: u32,
    /// Image height in pixels.
    pub height: u32,
    /// Diagonal field of view in radians.
    pub diag_fov: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        // QVGA with a 70.1 degree diagonal FOV.
        Self {
            width: 320,
            height: 240,
            diag_fov: 70.1f64.to_radians(),
        }
    }
}

impl CameraModel {
    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        let diag = ((self.width * self.width + self.height * self.height) as f64).sqrt();
        diag / 2.0 / (self.diag_fov / 2.0).tan()
    }

    fn validate(&self) -> Result<(), CalibError> {
        if self.width == 0 || self.height == 0 {
            return Err(CalibError::InvalidValue(
                "camera needs nonzero resolution".into(),
            ));
        }
        if !(self.diag_fov > 0.0 && self.diag_fov < std::f64::consts::PI) {
            return Err(CalibError::InvalidValue(format!(
                "camera FOV must lie in (0, pi), got {}",
                self.diag_fov
            )));
        }
        Ok(())
    }
}

/// Ground-truth ground relation of a simulated sensor, in metric units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthGround {
    /// Metric height above the plane (meters).
    pub z: f64,
    /// Roll-like angle (radians).
    pub alpha: f64,
    /// Pitch-like angle (radians).
    pub beta: f64,
}

/// Ground truth of one simulated non-reference sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSensorSpec {
    /// Sensor identifier (also used for fixture file names).
    pub id: String,
    /// Sensor category.
    pub kind: SensorKind,
    /// Metric lever arm from the reference sensor (meters).
    pub lever_arm: [f64; 2],
    /// Yaw offset from the reference sensor (radians).
    pub yaw: f64,
    /// Reconstruction scale in sensor units per meter; 1.0 for metric
    /// sensors.
    #[serde(default = "default_recon_scale")]
    pub recon_scale: f64,
    /// Ground relation; required for 3D sensors.
    pub ground: Option<GroundTruthGround>,
}

fn default_recon_scale() -> f64 {
    1.0
}

impl SimSensorSpec {
    /// The ground-truth planar calibration: translation in sensor units,
    /// scale in meters per sensor unit.
    pub fn truth_x(&self) -> Sim2 {
        Sim2::new(
            self.lever_arm[0] * self.recon_scale,
            self.lever_arm[1] * self.recon_scale,
            self.yaw,
            1.0 / self.recon_scale,
        )
    }

    /// The ground-truth ground alignment in sensor (reconstruction) units.
    pub fn truth_g(&self) -> Option<GroundAlignment> {
        self.ground
            .map(|g| GroundAlignment::new(g.z * self.recon_scale, g.alpha, g.beta))
    }
}

/// Full configuration of a simulation instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Master seed; every noise stream derives from it.
    pub seed: u64,
    /// Noise level multiplier; zero gives exact data.
    pub noise_level: f64,
    /// Number of laps around the eight-shaped path.
    pub n_laps: usize,
    /// Pose samples per lap.
    pub samples_per_lap: usize,
    /// Lobe radius of the eight-shaped path (meters).
    #[serde(default = "default_lobe_radius")]
    pub lobe_radius: f64,
    /// Time between consecutive samples (seconds).
    #[serde(default = "default_sample_dt")]
    pub sample_dt: f64,
    /// Translation noise at level 1 (meters per axis per motion).
    #[serde(default = "default_trans_sigma")]
    pub trans_sigma_base: f64,
    /// Rotation noise at level 1 (radians per axis per motion).
    #[serde(default = "default_rot_sigma")]
    pub rot_sigma_base: f64,
    /// Depth noise of the ground reconstruction at level 1 (meters).
    #[serde(default = "default_depth_sigma")]
    pub depth_sigma_base: f64,
    /// Camera used for ground reconstructions.
    #[serde(default)]
    pub camera: CameraModel,
    /// Non-reference sensors to simulate.
    pub sensors: Vec<SimSensorSpec>,
}

fn default_lobe_radius() -> f64 {
    1.5
}
fn default_sample_dt() -> f64 {
    0.1
}
fn default_trans_sigma() -> f64 {
    0.001
}
fn default_rot_sigma() -> f64 {
    0.03
}
fn default_depth_sigma() -> f64 {
    0.01
}

impl SimConfig {
    /// A two-sensor odometer + monocular camera setting.
    pub fn default_two_sensor(seed: u64, noise_level: f64) -> Self {
        Self {
            seed,
            noise_level,
            n_laps: 4,
            samples_per_lap: 60,
            lobe_radius: default_lobe_radius(),
            sample_dt: default_sample_dt(),
            trans_sigma_base: default_trans_sigma(),
            rot_sigma_base: default_rot_sigma(),
            depth_sigma_base: default_depth_sigma(),
            camera: CameraModel::default(),
            sensors: vec![SimSensorSpec {
                id: "cam".into(),
                kind: SensorKind::Monocular3d,
                lever_arm: [0.11, -0.05],
                yaw: 0.35,
                recon_scale: 2.0,
                ground: Some(GroundTruthGround {
                    z: 1.0,
                    // Tilted downward-facing camera.
                    alpha: std::f64::consts::PI - 0.6,
                    beta: 0.1,
                }),
            }],
        }
    }

    /// Checks the field invariants.
    pub fn validate(&self) -> Result<(), CalibError> {
        if self.noise_level < 0.0 {
            return Err(CalibError::InvalidValue("noise level must be >= 0".into()));
        }
        if self.n_laps < 1 || self.samples_per_lap < 8 {
            return Err(CalibError::InvalidValue(format!(
                "path needs n_laps >= 1 and samples_per_lap >= 8, got {} and {}",
                self.n_laps, self.samples_per_lap
            )));
        }
        if !(self.lobe_radius > 0.0 && self.sample_dt > 0.0) {
            return Err(CalibError::InvalidValue(
                "lobe radius and sample dt must be positive".into(),
            ));
        }
        if self.trans_sigma_base < 0.0 || self.rot_sigma_base < 0.0 || self.depth_sigma_base < 0.0 {
            return Err(CalibError::InvalidValue("noise sigmas must be >= 0".into()));
        }
        self.camera.validate()?;
        for s in &self.sensors {
            if !(s.recon_scale.is_finite() && s.recon_scale > 0.0) {
                return Err(CalibError::InvalidValue(format!(
                    "sensor {}: reconstruction scale must be positive",
                    s.id
                )));
            }
            if s.kind.is_metric() && s.recon_scale != 1.0 {
                return Err(CalibError::InvalidValue(format!(
                    "sensor {}: metric sensors must have reconstruction scale 1",
                    s.id
                )));
            }
            if s.kind.is_3d() && s.ground.is_none() {
                return Err(CalibError::InvalidValue(format!(
                    "sensor {}: 3D sensors need a ground-truth ground relation",
                    s.id
                )));
            }
        }
        Ok(())
    }
}

/// Which motion axes receive noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisMask(u8);

impl AxisMask {
    /// Translation along x.
    pub const TX: AxisMask = AxisMask(1);
    /// Translation along y.
    pub const TY: AxisMask = AxisMask(1 << 1);
    /// Translation along z.
    pub const TZ: AxisMask = AxisMask(1 << 2);
    /// Rotation about x.
    pub const RX: AxisMask = AxisMask(1 << 3);
    /// Rotation about y.
    pub const RY: AxisMask = AxisMask(1 << 4);
    /// Rotation about z.
    pub const RZ: AxisMask = AxisMask(1 << 5);
    /// Planar sensor mask: x-y translation plus z rotation.
    pub const PLANAR: AxisMask = AxisMask(1 | 1 << 1 | 1 << 5);
    /// All six axes.
    pub const ALL: AxisMask = AxisMask(0b111111);

    /// Whether the given axis bit is enabled.
    pub fn has(&self, axis: AxisMask) -> bool {
        self.0 & axis.0 != 0
    }
}

/// Axis indices of the counter-based noise streams.
const AXIS_TX: u32 = 0;
const AXIS_TY: u32 = 1;
const AXIS_TZ: u32 = 2;
const AXIS_RX: u32 = 3;
const AXIS_RY: u32 = 4;
const AXIS_RZ: u32 = 5;
const AXIS_DEPTH: u32 = 6;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// One standard-normal draw of the stream `(seed, sensor, axis, index)`.
fn normal_draw(seed: u64, sensor: u32, axis: u32, index: u64) -> f64 {
    let mut key = splitmix64(seed);
    key = splitmix64(key ^ ((sensor as u64) << 32 | axis as u64));
    key = splitmix64(key ^ index);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    StandardNormal.sample(&mut rng)
}

/// Noise stream description for motion perturbation.
#[derive(Debug, Clone, Copy)]
pub struct MotionNoise {
    /// Noise level multiplier.
    pub level: f64,
    /// Translation sigma at level 1 (per axis).
    pub trans_sigma_base: f64,
    /// Rotation sigma at level 1 (per axis).
    pub rot_sigma_base: f64,
    /// Master seed.
    pub seed: u64,
    /// Sensor stream index.
    pub sensor: u32,
    /// Axes receiving noise.
    pub axes: AxisMask,
}

impl MotionNoise {
    fn trans_sigma(&self) -> f64 {
        self.level * self.trans_sigma_base
    }

    fn rot_sigma(&self) -> f64 {
        self.level * self.rot_sigma_base
    }

    fn draw(&self, axis: u32, index: u64, sigma: f64, mask_bit: AxisMask) -> f64 {
        if sigma == 0.0 || !self.axes.has(mask_bit) {
            return 0.0;
        }
        sigma * normal_draw(self.seed, self.sensor, axis, index)
    }
}

/// Adds independent zero-mean Gaussian noise to planar incremental motions
/// on the masked axes.
pub fn perturb_planar_motions(motions: &[Pose2], noise: &MotionNoise) -> Vec<Pose2> {
    motions
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let idx = k as u64;
            Pose2::new(
                m.x() + noise.draw(AXIS_TX, idx, noise.trans_sigma(), AxisMask::TX),
                m.y() + noise.draw(AXIS_TY, idx, noise.trans_sigma(), AxisMask::TY),
                m.theta() + noise.draw(AXIS_RZ, idx, noise.rot_sigma(), AxisMask::RZ),
            )
        })
        .collect()
}

/// Adds independent zero-mean Gaussian noise to 6DoF incremental motions
/// on the masked axes; rotation noise composes on the right as
/// `R_x(n_x) R_y(n_y) R_z(n_z)`.
pub fn perturb_spatial_motions(motions: &[Pose3], noise: &MotionNoise) -> Vec<Pose3> {
    motions
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let idx = k as u64;
            let t = m.translation()
                + Vector3::new(
                    noise.draw(AXIS_TX, idx, noise.trans_sigma(), AxisMask::TX),
                    noise.draw(AXIS_TY, idx, noise.trans_sigma(), AxisMask::TY),
                    noise.draw(AXIS_TZ, idx, noise.trans_sigma(), AxisMask::TZ),
                );
            let nx = noise.draw(AXIS_RX, idx, noise.rot_sigma(), AxisMask::RX);
            let ny = noise.draw(AXIS_RY, idx, noise.rot_sigma(), AxisMask::RY);
            let nz = noise.draw(AXIS_RZ, idx, noise.rot_sigma(), AxisMask::RZ);
            let jitter = Rotation3::from_axis_angle(&Vector3::x_axis(), nx)
                * Rotation3::from_axis_angle(&Vector3::y_axis(), ny)
                * Rotation3::from_axis_angle(&Vector3::z_axis(), nz);
            Pose3::from_parts(m.rotation() * jitter, t)
        })
        .collect()
}

/// Samples the eight-shaped reference path: a Gerono lemniscate traversed
/// `n_laps` times with the heading tangent to the path. Uniform time
/// sampling, `samples_per_lap` intervals per lap, closing sample included.
pub fn generate_eight_path(cfg: &SimConfig) -> Result<Trajectory2, CalibError> {
    cfg.validate()?;
    let n = cfg.n_laps * cfg.samples_per_lap;
    let a = cfg.lobe_radius;
    let samples = (0..=n)
        .map(|k| {
            let u = std::f64::consts::TAU * k as f64 / cfg.samples_per_lap as f64;
            let (sin_u, cos_u) = u.sin_cos();
            let cos_2u = (2.0 * u).cos();
            // Position (a sin u, a sin u cos u); velocity (a cos u, a cos 2u).
            let pose = Pose2::new(
                a * sin_u,
                a * sin_u * cos_u,
                f64::atan2(a * cos_2u, a * cos_u),
            );
            TimedPose2::new(k as f64 * cfg.sample_dt, pose)
        })
        .collect();
    Trajectory2::new(samples)
}

/// The trajectory of a sensor rigidly attached at calibration `x`:
/// each pose is `q ⊕ x` with translations in the sensor's (possibly
/// scaled) units.
pub fn apply_extrinsic(ref_traj: &Trajectory2, x: &Sim2) -> Trajectory2 {
    let samples = ref_traj
        .samples()
        .iter()
        .map(|s| {
            let q = Sim2::from(s.pose).compose(x);
            TimedPose2::new(s.t, Pose2::new(q.x(), q.y(), q.theta()))
        })
        .collect();
    Trajectory2::new(samples).expect("valid trajectory stays valid under a fixed transform")
}

/// Embeds a planar pose into SE(3) (rotation about z, zero height).
pub fn embed_pose2(p: &Pose2) -> Pose3 {
    Pose3::from_parts(
        Rotation3::from_axis_angle(&Vector3::z_axis(), p.theta()),
        Vector3::new(p.x(), p.y(), 0.0),
    )
}

/// Lifts planar incremental motions into the 3D frame of a sensor with
/// ground relation `g`: `m3 = G^-1 ∘ embed(m2) ∘ G`.
pub fn lift_motions_to_3d(g: &GroundAlignment, motions2: &[Pose2]) -> Vec<Pose3> {
    let to_ground = g.to_pose3();
    let to_sensor = to_ground.inverse();
    motions2
        .iter()
        .map(|m| to_sensor.compose(&embed_pose2(m)).compose(&to_ground))
        .collect()
}

/// Back-projects every pixel of the camera onto the ground plane under the
/// alignment `g` (metric), expresses the points in the sensor frame at the
/// given reconstruction scale, and adds depth noise along the viewing ray.
///
/// Pixels whose rays never reach the plane are dropped; it is an error if
/// all of them miss.
pub fn generate_ground_points(
    camera: &CameraModel,
    g_metric: &GroundAlignment,
    recon_scale: f64,
    depth_sigma_metric: f64,
    seed: u64,
    sensor: u32,
) -> Result<Vec<WeightedPoint3>, CalibError> {
    camera.validate()?;
    if !recon_scale.is_finite() || recon_scale <= 0.0 {
        return Err(CalibError::InvalidValue(
            "reconstruction scale must be positive".into(),
        ));
    }
    let focal = camera.focal();
    let cx = camera.width as f64 / 2.0;
    let cy = camera.height as f64 / 2.0;
    let normal = g_metric.normal_row();
    let z_scaled = g_metric.z() * recon_scale;
    let sigma_scaled = depth_sigma_metric * recon_scale;

    let mut points = Vec::with_capacity((camera.width * camera.height) as usize);
    for v in 0..camera.height {
        for u in 0..camera.width {
            let dir = Vector3::new(
                (u as f64 + 0.5 - cx) / focal,
                (v as f64 + 0.5 - cy) / focal,
                1.0,
            );
            // Ray-plane intersection: normal . (s dir) + z = 0. Pixels at
            // or above the horizon (denom >= 0) never hit the plane.
            let denom = normal.dot(&dir);
            if denom >= 0.0 {
                continue;
            }
            let s = -z_scaled / denom;
            let mut m = dir * s;
            if sigma_scaled > 0.0 {
                let index = (v as u64) * camera.width as u64 + u as u64;
                let n = sigma_scaled * normal_draw(seed, sensor, AXIS_DEPTH, index);
                m += dir.normalize() * n;
            }
            points
                .push(WeightedPoint3::unweighted([m.x, m.y, m.z]).expect("finite back-projection"));
        }
    }
    if points.is_empty() {
        return Err(CalibError::DegenerateGeometry(
            "no camera ray intersects the ground plane".into(),
        ));
    }
    Ok(points)
}

/// Everything generated for one simulated non-reference sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSensor {
    /// The generating spec.
    pub spec: SimSensorSpec,
    /// Ground-truth planar calibration (sensor units / metric scale).
    pub truth_x: Sim2,
    /// Ground-truth ground alignment in sensor units (3D sensors only).
    pub truth_g: Option<GroundAlignment>,
    /// Exact planar trajectory in sensor units.
    pub exact2: Trajectory2,
    /// Noisy planar trajectory (planar sensors only).
    pub noisy2: Option<Trajectory2>,
    /// Noisy 6DoF trajectory (3D sensors only), integrated from identity.
    pub noisy3: Option<Vec<(f64, Pose3)>>,
    /// Synchronous noisy motion pairs against the reference, with 3D
    /// motions projected under the ground-truth alignment.
    pub noisy_pairs: Vec<MotionPair>,
    /// Noisy ground reconstruction (3D sensors only).
    pub ground_points: Option<Vec<WeightedPoint3>>,
}

/// A complete simulation draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SimInstance {
    /// Generating configuration.
    pub config: SimConfig,
    /// Shared sample times.
    pub timestamps: Vec<f64>,
    /// Exact reference trajectory.
    pub reference_exact: Trajectory2,
    /// Noisy reference trajectory (planar noise axes).
    pub reference_noisy: Trajectory2,
    /// Simulated sensors.
    pub sensors: Vec<SimSensor>,
}

impl SimInstance {
    /// Generates an instance from a config; fully deterministic in the
    /// config (including its seed).
    pub fn generate(config: &SimConfig) -> Result<Self, CalibError> {
        config.validate()?;
        let reference_exact = generate_eight_path(config)?;
        let timestamps: Vec<f64> = reference_exact.samples().iter().map(|s| s.t).collect();

        let ref_motions = reference_exact.incremental_motions();
        let ref_noise = MotionNoise {
            level: config.noise_level,
            trans_sigma_base: config.trans_sigma_base,
            rot_sigma_base: config.rot_sigma_base,
            seed: config.seed,
            sensor: 0,
            axes: AxisMask::PLANAR,
        };
        let ref_noisy_motions = perturb_planar_motions(&ref_motions, &ref_noise);
        let reference_noisy = Trajectory2::integrate(
            reference_exact.samples()[0].pose,
            &timestamps,
            &ref_noisy_motions,
        )?;

        let mut sensors = Vec::with_capacity(config.sensors.len());
        for (i, spec) in config.sensors.iter().enumerate() {
            let sensor_index = (i + 1) as u32;
            let truth_x = spec.truth_x();
            let truth_g = spec.truth_g();
            let exact2 = apply_extrinsic(&reference_exact, &truth_x);
            let motions2 = exact2.incremental_motions();

            let noise = MotionNoise {
                level: config.noise_level,
                trans_sigma_base: config.trans_sigma_base * spec.recon_scale,
                rot_sigma_base: config.rot_sigma_base,
                seed: config.seed,
                sensor: sensor_index,
                axes: if spec.kind.is_3d() {
                    AxisMask::ALL
                } else {
                    AxisMask::PLANAR
                },
            };

            let (noisy2, noisy3, noisy_motions2) = if spec.kind.is_3d() {
                let g = truth_g.expect("validated: 3D sensors carry a ground relation");
                let motions3 = lift_motions_to_3d(&g, &motions2);
                let noisy_motions3 = perturb_spatial_motions(&motions3, &noise);
                let mut pose = Pose3::identity();
                let mut traj3 = Vec::with_capacity(timestamps.len());
                traj3.push((timestamps[0], pose));
                for (t, m) in timestamps[1..].iter().zip(&noisy_motions3) {
                    pose = pose.compose(m);
                    traj3.push((*t, pose));
                }
                let projected: Vec<Pose2> = noisy_motions3
                    .iter()
                    .map(|m| project_motion_to_plane(&g, m))
                    .collect();
                (None, Some(traj3), projected)
            } else {
                let noisy_motions2 = perturb_planar_motions(&motions2, &noise);
                let traj2 =
                    Trajectory2::integrate(exact2.samples()[0].pose, &timestamps, &noisy_motions2)?;
                (Some(traj2), None, noisy_motions2)
            };

            let noisy_pairs: Vec<MotionPair> = ref_noisy_motions
                .iter()
                .zip(&noisy_motions2)
                .enumerate()
                .map(|(k, (p_ref, p_other))| MotionPair::new(*p_ref, *p_other, k))
                .collect();

            let ground_points = if spec.kind.is_3d() {
                let g_metric = spec.ground.expect("validated");
                Some(generate_ground_points(
                    &config.camera,
                    &GroundAlignment::new(g_metric.z, g_metric.alpha, g_metric.beta),
                    spec.recon_scale,
                    config.noise_level * config.depth_sigma_base,
                    config.seed,
                    sensor_index,
                )?)
            } else {
                None
            };

            sensors.push(SimSensor {
                spec: spec.clone(),
                truth_x,
                truth_g,
                exact2,
                noisy2,
                noisy3,
                noisy_pairs,
                ground_points,
            });
        }

        Ok(Self {
            config: config.clone(),
            timestamps,
            reference_exact,
            reference_noisy,
            sensors,
        })
    }
}
