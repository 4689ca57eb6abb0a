//! Closed-form coplanarity relaxation: height, pitch and roll of a sensor
//! relative to the ground plane from weighted plane observations, plus
//! projection of 3D motions onto that plane.
//!
//! The plane is fixed in Hessian normal form with normal `(0, 0, 1)` and
//! zero offset; the in-plane rotation is a gauge freedom fixed to zero
//! (it is calibrated later as the planar yaw). The weighted least squares
//! over (z, alpha, beta) reduces to a quadratic form in
//! `phi = [z, -sin(beta), cos(beta)sin(alpha), cos(beta)cos(alpha)]`
//! constrained to a unit trailing 3-vector, solved with a Lagrange
//! multiplier whose characteristic polynomial is a cubic.

use crate::geom::{GroundAlignment, Pose2, Pose3};
use crate::linalg::kernel_vector;
use crate::planar::{RANK_TOL, THIN_MARGIN_FACTOR};
use crate::poly::real_roots_cubic;
use crate::sync::{TimedPose2, Trajectory2};
use crate::CalibError;
use nalgebra::{Matrix4, RowVector4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

/// A 3D ground observation in the sensor frame with a positive weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint3 {
    /// Point coordinates in the sensor frame (sensor length units).
    pub m: [f64; 3],
    /// Positive weight.
    pub w: f64,
}

impl WeightedPoint3 {
    /// Builds a weighted observation; weight must be strictly positive and
    /// the point finite.
    pub fn new(m: [f64; 3], w: f64) -> Result<Self, CalibError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(CalibError::InvalidValue("non-finite ground point".into()));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(CalibError::InvalidValue(format!(
                "ground point weight must be positive, got {w}"
            )));
        }
        Ok(Self { m, w })
    }

    /// Unit-weight observation.
    pub fn unweighted(m: [f64; 3]) -> Result<Self, CalibError> {
        Self::new(m, 1.0)
    }

    fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.m[0], self.m[1], self.m[2])
    }
}

/// The 4x4 quadratic system of the coplanarity relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct Qcqp4System {
    m: Matrix4<f64>,
    w: Matrix4<f64>,
    weight_sum: f64,
    n_obs: usize,
}

impl Qcqp4System {
    /// The weighted data matrix.
    pub fn m(&self) -> &Matrix4<f64> {
        &self.m
    }

    /// The constraint selector (identity on the trailing 3x3 block).
    pub fn w(&self) -> &Matrix4<f64> {
        &self.w
    }
}

/// Output of [`solve_ground_alignment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundSolution {
    /// Estimated alignment.
    pub alignment: GroundAlignment,
    /// Weighted RMS of the signed plane distances at the solution,
    /// `sqrt(sum w_j eta_j^2 / sum w_j)`.
    pub rms_residual: f64,
    /// `sigma_3 / sigma_1` of `M + lambda* W`.
    pub rank_margin: f64,
    /// True when the rank margin is close to the degeneracy threshold.
    pub thin_margin: bool,
    /// Number of points used.
    pub n_points: usize,
}

/// Accumulates the weighted quadratic system from ground observations.
pub fn build_ground_qcqp(points: &[WeightedPoint3]) -> Result<Qcqp4System, CalibError> {
    if points.len() < 3 {
        return Err(CalibError::InsufficientData(format!(
            "ground alignment needs at least 3 points, got {}",
            points.len()
        )));
    }
    let mut m = Matrix4::zeros();
    let mut weight_sum = 0.0;
    for p in points {
        let q = RowVector4::new(1.0, p.m[0], p.m[1], p.m[2]);
        m += p.w * q.transpose() * q;
        weight_sum += p.w;
    }
    let mut w = Matrix4::identity();
    w[(0, 0)] = 0.0;
    Ok(Qcqp4System {
        m,
        w,
        weight_sum,
        n_obs: points.len(),
    })
}

/// `det(M + lambda W)` expanded in `lambda` via complementary principal
/// minors of the constrained indices {1, 2, 3}.
fn characteristic_coefficients(m: &Matrix4<f64>) -> (f64, f64, f64, f64) {
    let c0 = m.determinant();
    let mut c1 = 0.0;
    for i in 1..4 {
        c1 += m.clone_owned().remove_row(i).remove_column(i).determinant();
    }
    let mut c2 = 0.0;
    for i in 1..4 {
        for j in (i + 1)..4 {
            c2 += m
                .clone_owned()
                .remove_row(j)
                .remove_column(j)
                .remove_row(i)
                .remove_column(i)
                .determinant();
        }
    }
    let c3 = m[(0, 0)];
    (c3, c2, c1, c0)
}

/// Estimates the ground alignment from weighted plane observations.
///
/// The pitch angle is recovered on the `asin` branch `[-pi/2, pi/2]`,
/// consistent with a sensor above the plane.
pub fn solve_ground_alignment(points: &[WeightedPoint3]) -> Result<GroundSolution, CalibError> {
    let system = build_ground_qcqp(points)?;
    let m = &system.m;
    let norm = m.amax();
    if norm == 0.0 {
        return Err(CalibError::DegenerateGeometry(
            "all observations vanish; cannot constrain the plane".into(),
        ));
    }
    let m_scaled = m / norm;

    let (c3, c2, c1, c0) = characteristic_coefficients(&m_scaled);
    if c3.abs().max(c2.abs()).max(c1.abs()).max(c0.abs()) < 1e-12 {
        return Err(CalibError::DegenerateGeometry(
            "det(M + lambda W) vanishes identically: points are collinear or otherwise fail \
             to constrain the plane"
                .into(),
        ));
    }
    let roots = real_roots_cubic(c3, c2, c1, c0);
    if roots.is_empty() {
        return Err(CalibError::Conditioning(
            "no acceptable real root of det(M + lambda W)".into(),
        ));
    }

    let mut best: Option<(f64, Vector4<f64>, f64, bool)> = None;
    let mut saw_sign_failure = false;
    for lambda in roots {
        let shifted = m_scaled + lambda * system.w;
        let kernel = kernel_vector(nalgebra::DMatrix::from_iterator(
            4,
            4,
            shifted.iter().copied(),
        ));
        if kernel.sigma_second < RANK_TOL * kernel.sigma_max {
            return Err(CalibError::DegenerateGeometry(format!(
                "kernel dimension > 1 (sigma_3/sigma_1 = {:.3e}): points are collinear or \
                 otherwise fail to constrain the plane",
                kernel.sigma_second / kernel.sigma_max
            )));
        }
        let margin = kernel.sigma_second / kernel.sigma_max;
        let thin = margin < THIN_MARGIN_FACTOR * RANK_TOL;

        let gamma = Vector4::from_iterator(kernel.vector.iter().copied());
        let tail_norm = (gamma[1] * gamma[1] + gamma[2] * gamma[2] + gamma[3] * gamma[3]).sqrt();
        if tail_norm < 1e-12 * gamma.norm() {
            continue;
        }
        let phi = gamma * (gamma[0].signum() / tail_norm);
        if phi[0] <= 1e-12 {
            saw_sign_failure = true;
            continue;
        }
        let cost = (phi.transpose() * m * phi)[0];
        let replace = match &best {
            None => true,
            Some((best_cost, ..)) => cost < *best_cost,
        };
        if replace {
            best = Some((cost, phi, margin, thin));
        }
    }

    match best {
        Some((_, phi, margin, thin)) => {
            let beta = -phi[1].asin();
            let alpha = f64::atan2(phi[2], phi[3]);
            let alignment = GroundAlignment::new(phi[0], alpha, beta);
            // Direct recomputation: the quadratic form loses the small
            // residuals to cancellation on near-exact data.
            let mut num = 0.0;
            for p in points {
                let eta = plane_residual(&alignment, p);
                num += p.w * eta * eta;
            }
            Ok(GroundSolution {
                alignment,
                rms_residual: (num / system.weight_sum).sqrt(),
                rank_margin: margin,
                thin_margin: thin,
                n_points: system.n_obs,
            })
        }
        None if saw_sign_failure => Err(CalibError::ScaleSign { component: "x_z" }),
        None => Err(CalibError::Conditioning(
            "no usable kernel candidate".into(),
        )),
    }
}

/// Signed distance of an observation to the plane after applying the
/// alignment: `r_z . m + z`.
pub fn plane_residual(g: &GroundAlignment, p: &WeightedPoint3) -> f64 {
    g.normal_row().dot(&p.vector()) + g.z()
}

/// Projects a 3D incremental motion onto the ground plane:
/// `R_bar = R R_k R'`, `t_bar = R t_k`, keeping the x-y translation and the
/// rotation angle about the z-axis.
pub fn project_motion_to_plane(g: &GroundAlignment, motion: &Pose3) -> Pose2 {
    let r = g.to_pose3().rotation().matrix().clone_owned();
    let r_bar = r * motion.rotation().matrix() * r.transpose();
    let t_bar = r * motion.translation();
    Pose2::new(t_bar.x, t_bar.y, f64::atan2(r_bar[(1, 0)], r_bar[(0, 0)]))
}

/// Projects a timestamped 3D trajectory onto the ground plane: extracts the
/// 3D incremental motions, projects each, and re-integrates from the
/// identity pose preserving timestamps.
pub fn project_trajectory(
    g: &GroundAlignment,
    traj3: &[(f64, Pose3)],
) -> Result<Trajectory2, CalibError> {
    if traj3.len() < 2 {
        return Err(CalibError::InsufficientData(format!(
            "trajectory projection needs at least 2 poses, got {}",
            traj3.len()
        )));
    }
    let mut samples = Vec::with_capacity(traj3.len());
    let mut pose = Pose2::identity();
    samples.push(TimedPose2::new(traj3[0].0, pose));
    for w in traj3.windows(2) {
        let motion3 = w[0].1.inverse().compose(&w[1].1);
        pose = pose.compose(&project_motion_to_plane(g, &motion3));
        samples.push(TimedPose2::new(w[1].0, pose));
    }
    Trajectory2::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::normalize_angle;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Moves plane points (z = 0 in ground coordinates) into the sensor
    /// frame of a known alignment.
    fn points_in_sensor_frame(g: &GroundAlignment, plane_xy: &[(f64, f64)]) -> Vec<WeightedPoint3> {
        let to_ground = g.to_pose3();
        let to_sensor = to_ground.inverse();
        plane_xy
            .iter()
            .map(|&(x, y)| {
                let m = to_sensor.apply(Vector3::new(x, y, 0.0));
                WeightedPoint3::unweighted([m.x, m.y, m.z]).unwrap()
            })
            .collect()
    }

    fn spread_xy(rng: &mut StdRng, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
            .collect()
    }

    #[test]
    fn flat_points_force_identity_rotation() {
        let points: Vec<WeightedPoint3> = [
            [0.0, 0.0, -1.5],
            [1.0, 0.0, -1.5],
            [0.0, 1.0, -1.5],
            [-2.0, 1.0, -1.5],
            [0.5, -1.0, -1.5],
        ]
        .iter()
        .map(|m| WeightedPoint3::unweighted(*m).unwrap())
        .collect();
        let sol = solve_ground_alignment(&points).unwrap();
        assert_relative_eq!(sol.alignment.z(), 1.5, epsilon = 1e-10);
        assert!(sol.alignment.alpha().abs() < 1e-10);
        assert!(sol.alignment.beta().abs() < 1e-10);
        assert!(sol.rms_residual < 1e-12);
    }

    #[test]
    fn recovers_known_alignment_noise_free() {
        let mut rng = StdRng::seed_from_u64(41);
        let g = GroundAlignment::new(1.2, 10.0 * PI / 180.0, 5.0 * PI / 180.0);
        let points = points_in_sensor_frame(&g, &spread_xy(&mut rng, 200));
        let sol = solve_ground_alignment(&points).unwrap();
        assert!((sol.alignment.z() - g.z()).abs() < 1e-8);
        assert!((sol.alignment.alpha() - g.alpha()).abs() < 1e-8);
        assert!((sol.alignment.beta() - g.beta()).abs() < 1e-8);
    }

    #[test]
    fn recovers_downward_facing_alignment() {
        // alpha beyond pi/2 (sensor optical axis toward the plane).
        let mut rng = StdRng::seed_from_u64(43);
        let g = GroundAlignment::new(0.8, PI - 0.6, 0.1);
        let points = points_in_sensor_frame(&g, &spread_xy(&mut rng, 100));
        let sol = solve_ground_alignment(&points).unwrap();
        assert!((sol.alignment.z() - g.z()).abs() < 1e-8);
        assert!(normalize_angle(sol.alignment.alpha() - g.alpha()).abs() < 1e-8);
        assert!((sol.alignment.beta() - g.beta()).abs() < 1e-8);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let points: Vec<WeightedPoint3> = (0..10)
            .map(|k| WeightedPoint3::unweighted([k as f64 * 0.3, 0.0, -1.0]).unwrap())
            .collect();
        assert!(matches!(
            solve_ground_alignment(&points),
            Err(CalibError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn too_few_points_rejected() {
        let p = WeightedPoint3::unweighted([0.0, 0.0, -1.0]).unwrap();
        assert!(matches!(
            solve_ground_alignment(&[p, p]),
            Err(CalibError::InsufficientData(_))
        ));
    }

    #[test]
    fn weight_scaling_leaves_solution_unchanged() {
        let mut rng = StdRng::seed_from_u64(47);
        let g = GroundAlignment::new(1.0, 0.2, -0.1);
        let mut points = points_in_sensor_frame(&g, &spread_xy(&mut rng, 50));
        // Perturb a little so the fit is not trivially exact.
        for p in &mut points {
            p.m[2] += rng.gen_range(-0.01..0.01);
        }
        let base = solve_ground_alignment(&points).unwrap();
        let scaled: Vec<WeightedPoint3> = points
            .iter()
            .map(|p| WeightedPoint3::new(p.m, p.w * 7.5).unwrap())
            .collect();
        let sol = solve_ground_alignment(&scaled).unwrap();
        assert!((sol.alignment.z() - base.alignment.z()).abs() < 1e-12);
        assert!((sol.alignment.alpha() - base.alignment.alpha()).abs() < 1e-12);
        assert!((sol.alignment.beta() - base.alignment.beta()).abs() < 1e-12);
        assert!((sol.rms_residual - base.rms_residual).abs() < 1e-12);
    }

    #[test]
    fn rms_matches_direct_recomputation() {
        let mut rng = StdRng::seed_from_u64(53);
        let g = GroundAlignment::new(1.0, 0.15, 0.05);
        let mut points = points_in_sensor_frame(&g, &spread_xy(&mut rng, 80));
        for p in &mut points {
            p.m[2] += rng.gen_range(-0.02..0.02);
            p.w = rng.gen_range(0.5..2.0);
        }
        let sol = solve_ground_alignment(&points).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for p in &points {
            let eta = plane_residual(&sol.alignment, p);
            num += p.w * eta * eta;
            den += p.w;
        }
        assert!((sol.rms_residual - (num / den).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn plane_residual_hand_cases() {
        let g = GroundAlignment::new(1.0, 0.0, 0.0);
        let on_plane = WeightedPoint3::unweighted([0.0, 0.0, -1.0]).unwrap();
        assert_eq!(plane_residual(&g, &on_plane), 0.0);
        let origin = WeightedPoint3::unweighted([0.0, 0.0, 0.0]).unwrap();
        assert_eq!(plane_residual(&g, &origin), 1.0);
    }

    #[test]
    fn plane_residual_is_third_component_of_transform() {
        let mut rng = StdRng::seed_from_u64(59);
        for _ in 0..100 {
            let g = GroundAlignment::new(
                rng.gen_range(0.1..3.0),
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
            );
            let p = WeightedPoint3::unweighted([
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ])
            .unwrap();
            let mapped = g.to_pose3().apply(p.vector());
            assert!((plane_residual(&g, &p) - mapped.z).abs() < 1e-12);
        }
    }

    #[test]
    fn planar_motion_projects_to_itself_under_zero_angles() {
        let g = GroundAlignment::new(0.7, 0.0, 0.0);
        let motion = Pose3::from_parts(
            Rotation3::from_axis_angle(&Vector3::z_axis(), 0.4),
            Vector3::new(0.3, -0.2, 0.9),
        );
        let p = project_motion_to_plane(&g, &motion);
        assert_relative_eq!(p.x(), 0.3, epsilon = 1e-12);
        assert_relative_eq!(p.y(), -0.2, epsilon = 1e-12);
        assert_relative_eq!(p.theta(), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn vertical_sensor_axis_motion_becomes_planar_translation() {
        // alpha = 0, beta = 90 deg: the sensor z-axis lies in the plane.
        let g = GroundAlignment::new(1.0, 0.0, FRAC_PI_2);
        let motion = Pose3::from_parts(Rotation3::identity(), Vector3::new(0.0, 0.0, 1.0));
        let p = project_motion_to_plane(&g, &motion);
        assert_relative_eq!(p.translation().norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.theta(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_is_independent_of_height() {
        let motion = Pose3::from_parts(
            Rotation3::from_axis_angle(&Vector3::z_axis(), 0.3),
            Vector3::new(0.5, 0.1, 0.0),
        );
        let a = project_motion_to_plane(&GroundAlignment::new(0.5, 0.2, -0.3), &motion);
        let b = project_motion_to_plane(&GroundAlignment::new(5.0, 0.2, -0.3), &motion);
        assert_eq!(a, b);
    }

    fn lift_pose2(g: &GroundAlignment, q: &Pose2) -> Pose3 {
        // World pose of the sensor when its plane frame sits at q: map
        // sensor coordinates to plane coordinates, then plane to world.
        let plane = Pose3::from_parts(
            Rotation3::from_axis_angle(&Vector3::z_axis(), q.theta()),
            Vector3::new(q.x(), q.y(), 0.0),
        );
        plane.compose(&g.to_pose3())
    }

    #[test]
    fn tilted_planar_trajectory_projects_back() {
        let mut rng = StdRng::seed_from_u64(61);
        let g = GroundAlignment::new(1.3, 0.35, -0.2);
        let poses2: Vec<Pose2> = (0..20)
            .map(|_| {
                Pose2::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-PI..PI),
                )
            })
            .collect();
        let traj3: Vec<(f64, Pose3)> = poses2
            .iter()
            .enumerate()
            .map(|(k, q)| (k as f64 * 0.1, lift_pose2(&g, q)))
            .collect();
        let projected = project_trajectory(&g, &traj3).unwrap();
        // The projection starts at the identity; compare incremental motions.
        let expected = Trajectory2::new(
            poses2
                .iter()
                .enumerate()
                .map(|(k, q)| TimedPose2::new(k as f64 * 0.1, *q))
                .collect(),
        )
        .unwrap();
        for (a, b) in projected
            .incremental_motions()
            .iter()
            .zip(expected.incremental_motions())
        {
            assert!((a.x() - b.x()).abs() < 1e-9);
            assert!((a.y() - b.y()).abs() < 1e-9);
            assert!(normalize_angle(a.theta() - b.theta()).abs() < 1e-9);
        }
    }

    #[test]
    fn vertical_oscillation_projects_to_zero_motion() {
        let g = GroundAlignment::new(1.0, 0.0, 0.0);
        let traj3: Vec<(f64, Pose3)> = (0..10)
            .map(|k| {
                let z = 0.05 * (k as f64).sin();
                (
                    k as f64 * 0.1,
                    Pose3::from_parts(Rotation3::identity(), Vector3::new(0.0, 0.0, z)),
                )
            })
            .collect();
        let projected = project_trajectory(&g, &traj3).unwrap();
        for m in projected.incremental_motions() {
            assert!(m.x().abs() < 1e-12 && m.y().abs() < 1e-12 && m.theta().abs() < 1e-12);
        }
    }
}
