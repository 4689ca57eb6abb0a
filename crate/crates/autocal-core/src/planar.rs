//! Closed-form pairwise Sim(2) calibration from synchronous incremental
//! motions.
//!
//! The least-squares problem over (x, y, yaw, scale) is rewritten as a
//! quadratic form in the parameter vector
//! `phi = [1/scale, x, y, cos(yaw), sin(yaw)]` subject to the quadratic
//! constraint `phi_4^2 + phi_5^2 = 1`. The constrained minimum is found
//! with a Lagrange multiplier: `det(M + lambda * W)` is a degree-2
//! polynomial in `lambda`, each real root contributes one kernel candidate,
//! and the candidate with the lower cost `phi' M phi` is kept.
//!
//! The solution is unique provided the trajectories contain at least two
//! linearly independent incremental motions; otherwise `M + lambda * W`
//! has a kernel of dimension greater than one and the solver reports a
//! degeneracy instead of an arbitrary answer.

use crate::geom::{normalize_angle, Pose2, Sim2};
use crate::linalg::kernel_vector;
use crate::poly::real_roots_quadratic;
use crate::sync::MotionPair;
use crate::CalibError;
use nalgebra::{Matrix2x5, Matrix5, Vector5};

/// Relative tolerance on the second-smallest singular value used to decide
/// that the kernel is one-dimensional.
pub const RANK_TOL: f64 = 1e-8;

/// Margin factor above [`RANK_TOL`] under which a solution is flagged as
/// close to degenerate.
pub const THIN_MARGIN_FACTOR: f64 = 100.0;

/// Tie tolerance between the two candidate costs; ties resolve to the
/// candidate with larger `phi_1` (smaller scale).
const COST_TIE_TOL: f64 = 1e-12;

/// The quadratic system of the pairwise calibration problem.
#[derive(Debug, Clone, PartialEq)]
pub struct QcqpSystem {
    m: Matrix5<f64>,
    w: Matrix5<f64>,
    n_obs: usize,
}

impl QcqpSystem {
    /// The data matrix `M = sum_k Q_k' Q_k` (symmetric positive
    /// semidefinite).
    pub fn m(&self) -> &Matrix5<f64> {
        &self.m
    }

    /// The constraint selector `W` (identity on the trailing 2x2 block).
    pub fn w(&self) -> &Matrix5<f64> {
        &self.w
    }

    /// Number of motion pairs accumulated into `M`.
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }
}

/// The constrained parameter vector
/// `[1/scale, x, y, cos(yaw), sin(yaw)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiVector(Vector5<f64>);

impl PhiVector {
    fn from_kernel(gamma: &Vector5<f64>) -> Option<Self> {
        let angle_norm = (gamma[3] * gamma[3] + gamma[4] * gamma[4]).sqrt();
        if angle_norm < 1e-12 * gamma.norm() {
            return None;
        }
        let phi = gamma * (gamma[0].signum() / angle_norm);
        if phi[0] <= 1e-12 {
            return None;
        }
        Some(Self(phi))
    }

    /// The raw 5-vector.
    pub fn as_vector(&self) -> &Vector5<f64> {
        &self.0
    }

    /// Inverse scale component (strictly positive).
    pub fn inv_scale(&self) -> f64 {
        self.0[0]
    }

    /// Deviation of `cos^2 + sin^2` from one.
    pub fn constraint_defect(&self) -> f64 {
        (self.0[3] * self.0[3] + self.0[4] * self.0[4] - 1.0).abs()
    }

    /// Recovers the calibration parameters.
    pub fn to_sim2(&self) -> Sim2 {
        Sim2::new(
            self.0[1],
            self.0[2],
            f64::atan2(self.0[4], self.0[3]),
            1.0 / self.0[0],
        )
    }
}

/// Output of [`solve_pairwise`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseSolution {
    /// The estimated calibration.
    pub params: Sim2,
    /// Residual cost `phi' M phi / 2` at the solution. The constant angle
    /// term of the full cost is dropped since it does not depend on the
    /// parameters.
    pub residual_cost: f64,
    /// The constrained parameter vector the calibration was recovered from.
    pub phi: PhiVector,
    /// `sigma_4 / sigma_1` of `M + lambda* W`: how far the kernel is from
    /// gaining a second dimension.
    pub rank_margin: f64,
    /// True when `rank_margin` is within [`THIN_MARGIN_FACTOR`] of
    /// [`RANK_TOL`]; the estimate is then close to unobservable.
    pub thin_margin: bool,
    /// Number of motion pairs used.
    pub n_pairs: usize,
}

/// Coefficient matrix of one motion pair: the residual of the pair is
/// `Q_k * phi`.
fn coefficient_matrix(pair: &MotionPair) -> Matrix2x5<f64> {
    let (sin_i, cos_i) = pair.p_ref.theta().sin_cos();
    Matrix2x5::new(
        -pair.p_ref.x(),
        1.0 - cos_i,
        sin_i,
        pair.p_other.x(),
        -pair.p_other.y(),
        -pair.p_ref.y(),
        -sin_i,
        1.0 - cos_i,
        pair.p_other.y(),
        pair.p_other.x(),
    )
}

/// Accumulates the quadratic system from motion pairs.
pub fn build_qcqp(pairs: &[MotionPair]) -> Result<QcqpSystem, CalibError> {
    if pairs.len() < 2 {
        return Err(CalibError::InsufficientData(format!(
            "pairwise calibration needs at least 2 motion pairs, got {}",
            pairs.len()
        )));
    }
    let mut m = Matrix5::zeros();
    for pair in pairs {
        let q = coefficient_matrix(pair);
        m += q.transpose() * q;
    }
    let mut w = Matrix5::zeros();
    w[(3, 3)] = 1.0;
    w[(4, 4)] = 1.0;
    Ok(QcqpSystem {
        m,
        w,
        n_obs: pairs.len(),
    })
}

/// `det(M + lambda W)` expanded in `lambda` via complementary principal
/// minors of the constrained indices {3, 4}.
fn characteristic_coefficients(m: &Matrix5<f64>) -> (f64, f64, f64) {
    let c0 = m.determinant();
    let minor4 = m.clone_owned().remove_row(3).remove_column(3);
    let minor5 = m.clone_owned().remove_row(4).remove_column(4);
    let c1 = minor4.determinant() + minor5.determinant();
    let c2 = m.fixed_view::<3, 3>(0, 0).determinant();
    (c2, c1, c0)
}

/// Solves the pairwise calibration problem in closed form.
pub fn solve_pairwise(pairs: &[MotionPair]) -> Result<PairwiseSolution, CalibError> {
    let system = build_qcqp(pairs)?;
    solve_qcqp(&system)
}

/// Solves a pre-built quadratic system.
pub fn solve_qcqp(system: &QcqpSystem) -> Result<PairwiseSolution, CalibError> {
    let m = &system.m;
    let norm = m.amax();
    if norm == 0.0 {
        return Err(CalibError::DegenerateGeometry(
            "all motions are stationary; the matrix has rank 0, need rank exactly 4".into(),
        ));
    }
    let m_scaled = m / norm;

    let (c2, c1, c0) = characteristic_coefficients(&m_scaled);
    if c2.abs().max(c1.abs()).max(c0.abs()) < 1e-12 {
        return Err(CalibError::DegenerateGeometry(
            "det(M + lambda W) vanishes identically: the matrix must have rank exactly 4, \
             which requires at least two linearly independent incremental motions"
                .into(),
        ));
    }
    let roots = real_roots_quadratic(c2, c1, c0);
    if roots.is_empty() {
        return Err(CalibError::Conditioning(
            "no acceptable real root of det(M + lambda W)".into(),
        ));
    }

    let mut best: Option<(f64, PhiVector, f64, bool)> = None;
    let mut saw_sign_failure = false;
    for lambda in roots {
        let shifted = m_scaled + lambda * system.w;
        let kernel = kernel_vector(nalgebra::DMatrix::from_iterator(
            5,
            5,
            shifted.iter().copied(),
        ));
        if kernel.sigma_second < RANK_TOL * kernel.sigma_max {
            return Err(CalibError::DegenerateGeometry(format!(
                "kernel dimension > 1 (sigma_4/sigma_1 = {:.3e}): the matrix must have rank \
                 exactly 4, which requires at least two linearly independent incremental motions",
                kernel.sigma_second / kernel.sigma_max
            )));
        }
        let margin = kernel.sigma_second / kernel.sigma_max;
        let thin = margin < THIN_MARGIN_FACTOR * RANK_TOL;
        let gamma = Vector5::from_iterator(kernel.vector.iter().copied());
        let phi = match PhiVector::from_kernel(&gamma) {
            Some(phi) => phi,
            None => {
                saw_sign_failure = true;
                continue;
            }
        };
        let cost = (phi.0.transpose() * m * phi.0)[0];
        let replace = match &best {
            None => true,
            Some((best_cost, best_phi, _, _)) => {
                cost < best_cost - COST_TIE_TOL
                    || ((cost - best_cost).abs() <= COST_TIE_TOL
                        && phi.inv_scale() > best_phi.inv_scale())
            }
        };
        if replace {
            best = Some((cost, phi, margin, thin));
        }
    }

    match best {
        Some((cost, phi, margin, thin)) => Ok(PairwiseSolution {
            params: phi.to_sim2(),
            residual_cost: cost / 2.0,
            phi,
            rank_margin: margin,
            thin_margin: thin,
            n_pairs: system.n_obs,
        }),
        None if saw_sign_failure => Err(CalibError::ScaleSign { component: "phi_1" }),
        None => Err(CalibError::Conditioning(
            "no usable kernel candidate".into(),
        )),
    }
}

/// Least-squares cost of a calibration over motion pairs:
/// `1/2 sum_k || x ⊕ p_other - p_ref ⊕ x ||^2` evaluated on the
/// translation components and the (parameter-independent) angle residual.
pub fn pairwise_cost(x: &Sim2, pairs: &[MotionPair]) -> f64 {
    let mut cost = 0.0;
    for pair in pairs {
        let lhs = x.compose(&Sim2::from(pair.p_other));
        let rhs = Sim2::from(pair.p_ref).compose(x);
        let dx = lhs.x() - rhs.x();
        let dy = lhs.y() - rhs.y();
        let dt = normalize_angle(lhs.theta() - rhs.theta());
        cost += dx * dx + dy * dy + dt * dt;
    }
    cost / 2.0
}

/// Generates the other sensor's motion implied by a reference motion and a
/// calibration: `⊖x ⊕ p_ref ⊕ x`.
pub fn predict_other_motion(x: &Sim2, p_ref: &Pose2) -> Pose2 {
    let composed = x.inverse().compose(&Sim2::from(*p_ref)).compose(x);
    Pose2::new(composed.x(), composed.y(), composed.theta())
}
