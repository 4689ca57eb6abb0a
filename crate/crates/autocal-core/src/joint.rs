//! Joint multi-sensor refinement of the planar calibrations with a robust
//! loss, plus monocular metric-height recovery.
//!
//! All residuals are metric-space translation errors, so the terms of
//! every sensor live in the same units and one loss scale applies to all
//! of them. Parameters are refined as `(x, y, theta, log scale)`:
//! the angle updates on the circle and the log keeps the scale positive
//! without constraints.
//!
//! Cross-sensor constraints substitute the relative transform
//! `⊖x_0i ⊕ x_0j` into the same residual, tying non-reference sensors to
//! each other; only pairs whose first sensor provides metrically accurate
//! motions are admissible.

use crate::geom::{normalize_angle, Sim2};
use crate::robust::translation_error;
use crate::sync::MotionPair;
use crate::CalibError;
use nalgebra::{DMatrix, DVector, Matrix2x4, Matrix4, Vector2};

/// Robust loss applied to each residual term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    /// Plain least squares.
    Squared,
    /// Cauchy loss `rho(s) = c^2 ln(1 + s/c^2)` on the squared residual.
    Cauchy {
        /// Loss scale `c` (meters); residuals beyond it are downweighted.
        scale: f64,
    },
}

impl Loss {
    /// `(rho(s), rho'(s))` for a squared residual `s`.
    fn evaluate(&self, s: f64) -> (f64, f64) {
        match self {
            Loss::Squared => (s, 1.0),
            Loss::Cauchy { scale } => {
                let c2 = scale * scale;
                // ln_1p keeps the cost exact when s/c^2 underflows 1 + x.
                (c2 * (s / c2).ln_1p(), 1.0 / (1.0 + s / c2))
            }
        }
    }
}

/// Where the robust loss sits in each term.
///
/// The standard convention applies the loss to the squared norm of the
/// residual vector. The alternative applies it to each squared component
/// before summing, which reweights the x and y errors independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossForm {
    /// `rho(||gamma||^2)` (default).
    OnSquaredNorm,
    /// `sum_c rho(gamma_c^2)`.
    Componentwise,
}

/// A cross-sensor constraint block: synchronous motions of two
/// non-reference sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossObservations {
    /// First sensor (must provide metric motions).
    pub i: usize,
    /// Second sensor.
    pub j: usize,
    /// Synchronous motion pairs `(p_i, p_j)`.
    pub pairs: Vec<MotionPair>,
}

/// The joint calibration problem over `n_sensors` sensors; sensor 0 is the
/// reference and carries no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct JointProblem {
    /// Total sensor count, reference included.
    pub n_sensors: usize,
    /// Per non-reference sensor, the motion pairs against the reference;
    /// entry `i` belongs to sensor `i + 1`.
    pub reference_obs: Vec<Vec<MotionPair>>,
    /// Additional cross-sensor constraint blocks (the set `S`).
    pub cross_obs: Vec<CrossObservations>,
    /// Which sensors provide metrically accurate motions (index 0 must).
    pub metric: Vec<bool>,
    /// Initial estimates from the closed-form solver, one per
    /// non-reference sensor.
    pub initial: Vec<Sim2>,
    /// Robust loss.
    pub loss: Loss,
    /// Loss placement convention.
    pub loss_form: LossForm,
}

impl JointProblem {
    /// Validates the problem structure.
    pub fn validate(&self) -> Result<(), CalibError> {
        if self.n_sensors < 2 {
            return Err(CalibError::InsufficientData(
                "joint refinement needs at least two sensors".into(),
            ));
        }
        if self.reference_obs.len() != self.n_sensors - 1
            || self.initial.len() != self.n_sensors - 1
            || self.metric.len() != self.n_sensors
        {
            return Err(CalibError::InvalidValue(format!(
                "inconsistent problem sizes for {} sensors",
                self.n_sensors
            )));
        }
        if !self.metric[0] {
            return Err(CalibError::InvalidValue(
                "the reference sensor must provide metric motions".into(),
            ));
        }
        for (idx, obs) in self.reference_obs.iter().enumerate() {
            if obs.is_empty() {
                return Err(CalibError::InsufficientData(format!(
                    "sensor {} has no motion pairs against the reference",
                    idx + 1
                )));
            }
        }
        for cross in &self.cross_obs {
            if cross.i == 0 || cross.j == 0 || cross.i == cross.j {
                return Err(CalibError::InvalidValue(format!(
                    "cross constraint ({}, {}) must link two distinct non-reference sensors",
                    cross.i, cross.j
                )));
            }
            if cross.i >= self.n_sensors || cross.j >= self.n_sensors {
                return Err(CalibError::InvalidValue(format!(
                    "cross constraint ({}, {}) out of range",
                    cross.i, cross.j
                )));
            }
            if !self.metric[cross.i] {
                return Err(CalibError::InvalidValue(format!(
                    "cross constraint ({}, {}): sensor {} does not provide metric motions",
                    cross.i, cross.j, cross.i
                )));
            }
            if cross.pairs.is_empty() {
                return Err(CalibError::InsufficientData(format!(
                    "cross constraint ({}, {}) has no motion pairs",
                    cross.i, cross.j
                )));
            }
        }
        if let Loss::Cauchy { scale } = self.loss {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(CalibError::InvalidValue(format!(
                    "Cauchy loss scale must be positive, got {scale}"
                )));
            }
        }
        Ok(())
    }
}

/// Relative calibration between two sensors expressed through their
/// reference calibrations: `⊖x_0i ⊕ x_0j`.
pub fn relative_calibration(x0i: &Sim2, x0j: &Sim2) -> Sim2 {
    x0i.inverse().compose(x0j)
}

/// Metric perpendicular distance of a monocular sensor: the scale factor
/// estimated in the motion-based step applied to the height observed in
/// the (same-reconstruction) coplanarity step.
pub fn recover_metric_z(ground_z: f64, scale: f64) -> f64 {
    scale * ground_z
}

/// One residual term with its Jacobians.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    /// Metric translation error of the pair.
    pub residual: Vector2<f64>,
    /// `(parameter index, d residual / d (x, y, theta, log scale))` for
    /// each parameter block the term depends on.
    pub jacobians: Vec<(usize, Matrix2x4<f64>)>,
}

/// Residual and Jacobian w.r.t. the raw parameters (x, y, theta, scale)
/// of the calibration the pair is expressed through.
fn gamma_with_jacobian(x: &Sim2, pair: &MotionPair) -> (Vector2<f64>, Matrix2x4<f64>) {
    let (s_t, c_t) = x.theta().sin_cos();
    let (s_j, c_j) = pair.p_other.theta().sin_cos();
    let (pjx, pjy) = (pair.p_other.x(), pair.p_other.y());
    let scale = x.scale();

    let ux = x.x() * (1.0 - c_j) + x.y() * s_j + c_t * pjx - s_t * pjy;
    let uy = -x.x() * s_j + x.y() * (1.0 - c_j) + s_t * pjx + c_t * pjy;
    let residual = Vector2::new(pair.p_ref.x() - scale * ux, pair.p_ref.y() - scale * uy);

    let jac = Matrix2x4::new(
        -scale * (1.0 - c_j),
        -scale * s_j,
        -scale * (-s_t * pjx - c_t * pjy),
        -ux,
        scale * s_j,
        -scale * (1.0 - c_j),
        -scale * (c_t * pjx - s_t * pjy),
        -uy,
    );
    (residual, jac)
}

/// Relative transform `⊖a ⊕ b` with Jacobians of its raw parameters
/// w.r.t. the raw parameters of `a` and `b`.
fn relative_with_jacobians(a: &Sim2, b: &Sim2) -> (Sim2, Matrix4<f64>, Matrix4<f64>) {
    let (sa, ca) = a.theta().sin_cos();
    let r = a.scale() / b.scale();
    let proj = a.x() * ca + a.y() * sa;
    let perp = a.x() * sa - a.y() * ca;

    let rel = relative_calibration(a, b);

    // Rows: (x, y, theta, scale) of the relative transform.
    let mut d_a = Matrix4::zeros();
    d_a[(0, 0)] = -r * ca;
    d_a[(0, 1)] = -r * sa;
    d_a[(0, 2)] = -r * (-a.x() * sa + a.y() * ca) - b.x() * sa + b.y() * ca;
    d_a[(0, 3)] = -proj / b.scale();
    d_a[(1, 0)] = r * sa;
    d_a[(1, 1)] = -r * ca;
    d_a[(1, 2)] = r * proj - b.x() * ca - b.y() * sa;
    d_a[(1, 3)] = perp / b.scale();
    d_a[(2, 2)] = -1.0;
    d_a[(3, 3)] = -b.scale() / (a.scale() * a.scale());

    let mut d_b = Matrix4::zeros();
    d_b[(0, 0)] = ca;
    d_b[(0, 1)] = sa;
    d_b[(0, 3)] = a.scale() * proj / (b.scale() * b.scale());
    d_b[(1, 0)] = -sa;
    d_b[(1, 1)] = ca;
    d_b[(1, 3)] = -a.scale() * perp / (b.scale() * b.scale());
    d_b[(2, 2)] = 1.0;
    d_b[(3, 3)] = 1.0 / a.scale();

    (rel, d_a, d_b)
}

/// Converts a raw-parameter Jacobian column layout into the internal
/// `(x, y, theta, log scale)` parameterization of a sensor with the given
/// scale.
fn to_log_scale_columns<const R: usize>(
    jac: &nalgebra::SMatrix<f64, R, 4>,
    scale: f64,
) -> nalgebra::SMatrix<f64, R, 4> {
    let mut out = *jac;
    for r in 0..R {
        out[(r, 3)] *= scale;
    }
    out
}

/// Evaluates every residual block of the problem at the given parameters,
/// with Jacobians in the internal `(x, y, theta, log scale)`
/// parameterization. Useful for diagnostics and derivative checks.
pub fn evaluate_blocks(problem: &JointProblem, params: &[Sim2]) -> Vec<ResidualBlock> {
    let mut blocks = Vec::new();
    for (idx, obs) in problem.reference_obs.iter().enumerate() {
        let x = &params[idx];
        for pair in obs {
            let (residual, jac_raw) = gamma_with_jacobian(x, pair);
            blocks.push(ResidualBlock {
                residual,
                jacobians: vec![(idx, to_log_scale_columns(&jac_raw, x.scale()))],
            });
        }
    }
    for cross in &problem.cross_obs {
        let a = &params[cross.i - 1];
        let b = &params[cross.j - 1];
        let (rel, d_a, d_b) = relative_with_jacobians(a, b);
        for pair in &cross.pairs {
            let (residual, jac_rel) = gamma_with_jacobian(&rel, pair);
            blocks.push(ResidualBlock {
                residual,
                jacobians: vec![
                    (
                        cross.i - 1,
                        to_log_scale_columns(&(jac_rel * d_a), a.scale()),
                    ),
                    (
                        cross.j - 1,
                        to_log_scale_columns(&(jac_rel * d_b), b.scale()),
                    ),
                ],
            });
        }
    }
    blocks
}

/// Robust cost of the problem at the given parameters.
pub fn joint_cost(problem: &JointProblem, params: &[Sim2]) -> f64 {
    let mut cost = 0.0;
    let mut add = |x: &Sim2, pair: &MotionPair| {
        let gamma = translation_error(x, pair);
        match problem.loss_form {
            LossForm::OnSquaredNorm => cost += problem.loss.evaluate(gamma.norm_squared()).0,
            LossForm::Componentwise => {
                cost += problem.loss.evaluate(gamma.x * gamma.x).0;
                cost += problem.loss.evaluate(gamma.y * gamma.y).0;
            }
        }
    };
    for (idx, obs) in problem.reference_obs.iter().enumerate() {
        for pair in obs {
            add(&params[idx], pair);
        }
    }
    for cross in &problem.cross_obs {
        let rel = relative_calibration(&params[cross.i - 1], &params[cross.j - 1]);
        for pair in &cross.pairs {
            add(&rel, pair);
        }
    }
    cost
}

/// Assembles the weighted normal equations `H = sum w J'J`,
/// `b = sum w J'gamma` and the robust-cost gradient `2b`.
fn assemble(problem: &JointProblem, params: &[Sim2]) -> (DMatrix<f64>, DVector<f64>) {
    let dim = 4 * params.len();
    let mut h = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);

    for block in evaluate_blocks(problem, params) {
        // Loss weights per scalar row of the block.
        let weights = match problem.loss_form {
            LossForm::OnSquaredNorm => {
                let w = problem.loss.evaluate(block.residual.norm_squared()).1;
                [w, w]
            }
            LossForm::Componentwise => [
                problem.loss.evaluate(block.residual.x * block.residual.x).1,
                problem.loss.evaluate(block.residual.y * block.residual.y).1,
            ],
        };
        for (row, &w) in weights.iter().enumerate() {
            let res = block.residual[row];
            for &(pi, ref jac_i) in &block.jacobians {
                let ji = jac_i.row(row);
                for ci in 0..4 {
                    b[4 * pi + ci] += w * ji[ci] * res;
                    for &(pj, ref jac_j) in &block.jacobians {
                        let jj = jac_j.row(row);
                        for cj in 0..4 {
                            h[(4 * pi + ci, 4 * pj + cj)] += w * ji[ci] * jj[cj];
                        }
                    }
                }
            }
        }
    }
    (h, b)
}

/// Applies an update step; `None` when the step leaves the valid domain
/// (non-finite translation or under/overflowed scale), which the solver
/// treats like a rejected step.
fn retract(params: &[Sim2], delta: &DVector<f64>) -> Option<Vec<Sim2>> {
    params
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let nx = x.x() + delta[4 * i];
            let ny = x.y() + delta[4 * i + 1];
            let ns = x.scale() * delta[4 * i + 3].exp();
            if !(nx.is_finite() && ny.is_finite() && ns.is_finite() && ns > 0.0) {
                return None;
            }
            Some(Sim2::new(
                nx,
                ny,
                normalize_angle(x.theta() + delta[4 * i + 2]),
                ns,
            ))
        })
        .collect()
}

/// Convergence thresholds of [`joint_refine`].
const REL_COST_TOL: f64 = 1e-10;
const GRADIENT_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 200;
const DAMPING_GROWTH_CAP: usize = 40;

/// Iterative damped least-squares refinement of the joint problem.
///
/// Starts from the closed-form initial estimates and returns the refined
/// calibrations together with the accepted-cost trace (monotonically
/// non-increasing, first entry = initial cost).
pub fn joint_refine(problem: &JointProblem) -> Result<(Vec<Sim2>, Vec<f64>), CalibError> {
    problem.validate()?;
    let mut params = problem.initial.clone();
    let mut cost = joint_cost(problem, &params);
    let mut trace = vec![cost];

    let mut damping: Option<f64> = None;
    for iteration in 0..MAX_ITERATIONS {
        let (h, b) = assemble(problem, &params);
        let gradient_norm = 2.0 * b.norm();
        if gradient_norm < GRADIENT_TOL {
            break;
        }
        let mu0 = damping.unwrap_or_else(|| 1e-6 * h.diagonal().max().max(1e-12));

        let mut accepted = false;
        let mut mu = mu0;
        for _ in 0..DAMPING_GROWTH_CAP {
            let mut damped = h.clone();
            for d in 0..damped.nrows() {
                damped[(d, d)] += mu;
            }
            let step = match damped.clone().cholesky() {
                Some(chol) => chol.solve(&(-&b)),
                None => {
                    mu *= 10.0;
                    continue;
                }
            };
            let Some(candidate) = retract(&params, &step) else {
                mu *= 10.0;
                continue;
            };
            let candidate_cost = joint_cost(problem, &candidate);
            if candidate_cost < cost {
                params = candidate;
                let decrease = cost - candidate_cost;
                cost = candidate_cost;
                trace.push(cost);
                damping = Some((mu / 10.0).max(1e-15));
                accepted = true;
                if decrease <= REL_COST_TOL * cost.max(f64::MIN_POSITIVE) {
                    return Ok((params, trace));
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            if iteration == 0 {
                return Err(CalibError::ConvergenceFailure {
                    initial: problem.initial.clone(),
                });
            }
            break;
        }
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose2;
    use crate::planar::{predict_other_motion, solve_pairwise};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn random_sim2(rng: &mut StdRng) -> Sim2 {
        Sim2::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-PI..PI),
            rng.gen_range(0.4..2.5),
        )
    }

    fn random_motions(rng: &mut StdRng, n: usize) -> Vec<Pose2> {
        (0..n)
            .map(|_| {
                Pose2::new(
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.5..0.5),
                )
            })
            .collect()
    }

    /// Exact three-sensor problem: sensors 1 and 2 observe motions implied
    /// by their ground-truth calibrations; the cross block ties 1 to 2.
    /// Sensor 1's motions must be metric for the cross block, so its scale
    /// is forced to one.
    fn exact_problem(rng: &mut StdRng, with_cross: bool) -> (JointProblem, Vec<Sim2>) {
        let x1 = {
            let x = random_sim2(rng);
            Sim2::new(x.x(), x.y(), x.theta(), 1.0)
        };
        let x2 = random_sim2(rng);
        let ref_motions = random_motions(rng, 30);
        let obs1: Vec<MotionPair> = ref_motions
            .iter()
            .enumerate()
            .map(|(k, p)| MotionPair::new(*p, predict_other_motion(&x1, p), k))
            .collect();
        let obs2: Vec<MotionPair> = ref_motions
            .iter()
            .enumerate()
            .map(|(k, p)| MotionPair::new(*p, predict_other_motion(&x2, p), k))
            .collect();
        let cross_pairs: Vec<MotionPair> = if with_cross {
            obs1.iter()
                .zip(&obs2)
                .enumerate()
                .map(|(k, (a, b))| MotionPair::new(a.p_other, b.p_other, k))
                .collect()
        } else {
            Vec::new()
        };
        let problem = JointProblem {
            n_sensors: 3,
            reference_obs: vec![obs1, obs2],
            cross_obs: if with_cross {
                vec![CrossObservations {
                    i: 1,
                    j: 2,
                    pairs: cross_pairs,
                }]
            } else {
                Vec::new()
            },
            metric: vec![true, true, false],
            initial: vec![x1, x2],
            loss: Loss::Cauchy { scale: 0.05 },
            loss_form: LossForm::OnSquaredNorm,
        };
        (problem, vec![x1, x2])
    }

    #[test]
    fn relative_calibration_identities() {
        let mut rng = StdRng::seed_from_u64(107);
        let a = random_sim2(&mut rng);
        let b = random_sim2(&mut rng);
        let rel_self = relative_calibration(&a, &a);
        assert!(rel_self.x().abs() < 1e-12 && rel_self.y().abs() < 1e-12);
        assert!(rel_self.theta().abs() < 1e-12);
        assert!((rel_self.scale() - 1.0).abs() < 1e-12);

        let rel_from_id = relative_calibration(&Sim2::identity(), &b);
        assert!((rel_from_id.x() - b.x()).abs() < 1e-12);

        let recomposed = a.compose(&relative_calibration(&a, &b));
        assert!((recomposed.x() - b.x()).abs() < 1e-12);
        assert!((recomposed.y() - b.y()).abs() < 1e-12);
        assert!(normalize_angle(recomposed.theta() - b.theta()).abs() < 1e-12);
        assert!((recomposed.scale() - b.scale()).abs() < 1e-12);
    }

    #[test]
    fn recover_metric_z_examples() {
        assert!((recover_metric_z(0.8, 1.5) - 1.2).abs() < 1e-15);
        assert_eq!(recover_metric_z(0.37, 1.0), 0.37);
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = StdRng::seed_from_u64(109);
        let (problem, _) = exact_problem(&mut rng, true);
        let eps = 1e-6;
        for _ in 0..10 {
            let params: Vec<Sim2> = (0..2).map(|_| random_sim2(&mut rng)).collect();
            let blocks = evaluate_blocks(&problem, &params);
            for (block_idx, block) in blocks.iter().enumerate() {
                for &(pi, ref jac) in &block.jacobians {
                    for col in 0..4 {
                        let perturb = |sign: f64| {
                            let mut p = params.clone();
                            let x = p[pi];
                            p[pi] = match col {
                                0 => Sim2::new(x.x() + sign * eps, x.y(), x.theta(), x.scale()),
                                1 => Sim2::new(x.x(), x.y() + sign * eps, x.theta(), x.scale()),
                                2 => Sim2::new(x.x(), x.y(), x.theta() + sign * eps, x.scale()),
                                _ => Sim2::new(
                                    x.x(),
                                    x.y(),
                                    x.theta(),
                                    x.scale() * (sign * eps).exp(),
                                ),
                            };
                            evaluate_blocks(&problem, &p)[block_idx].residual
                        };
                        let fd = (perturb(1.0) - perturb(-1.0)) / (2.0 * eps);
                        for row in 0..2 {
                            let analytic = jac[(row, col)];
                            let denom = analytic.abs().max(fd[row].abs()).max(1e-6);
                            assert!(
                                (analytic - fd[row]).abs() / denom < 1e-6,
                                "block {block_idx} param {pi} ({row},{col}): {analytic} vs {}",
                                fd[row]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn exact_initial_is_a_fixed_point() {
        let mut rng = StdRng::seed_from_u64(113);
        let (problem, truth) = exact_problem(&mut rng, false);
        let (refined, trace) = joint_refine(&problem).unwrap();
        assert!(!trace.is_empty());
        for (r, t) in refined.iter().zip(&truth) {
            assert!((r.x() - t.x()).abs() < 1e-9);
            assert!((r.y() - t.y()).abs() < 1e-9);
            assert!(normalize_angle(r.theta() - t.theta()).abs() < 1e-9);
            assert!((r.scale() - t.scale()).abs() < 1e-9 * t.scale());
        }
    }

    #[test]
    fn perturbed_initial_recovers_optimum() {
        let mut rng = StdRng::seed_from_u64(127);
        let (mut problem, truth) = exact_problem(&mut rng, false);
        problem.initial = truth
            .iter()
            .map(|x| Sim2::new(x.x() + 0.1, x.y() - 0.1, x.theta() + 0.1, x.scale() * 1.1))
            .collect();
        let (refined, trace) = joint_refine(&problem).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for (r, t) in refined.iter().zip(&truth) {
            assert!((r.x() - t.x()).abs() < 1e-6, "{r:?} vs {t:?}");
            assert!((r.y() - t.y()).abs() < 1e-6);
            assert!(normalize_angle(r.theta() - t.theta()).abs() < 1e-6);
            assert!((r.scale() - t.scale()).abs() < 1e-6 * t.scale());
        }
    }

    #[test]
    fn cross_constraints_preserve_loop_consistency_on_exact_data() {
        let mut rng = StdRng::seed_from_u64(131);
        let (problem, _) = exact_problem(&mut rng, true);
        let (refined, _) = joint_refine(&problem).unwrap();
        let rel = relative_calibration(&refined[0], &refined[1]);
        let direct = solve_pairwise(&problem.cross_obs[0].pairs).unwrap().params;
        assert!((rel.x() - direct.x()).abs() < 1e-8);
        assert!((rel.y() - direct.y()).abs() < 1e-8);
        assert!(normalize_angle(rel.theta() - direct.theta()).abs() < 1e-8);
        assert!((rel.scale() - direct.scale()).abs() < 1e-8 * direct.scale());
    }

    #[test]
    fn cross_constraints_never_worsen_loop_consistency() {
        let mut rng = StdRng::seed_from_u64(151);
        for _ in 0..5 {
            let (with_cross, _) = exact_problem(&mut rng, true);
            let mut without_cross = with_cross.clone();
            without_cross.cross_obs.clear();
            // Same perturbed start for both refinements.
            let perturbed: Vec<Sim2> = with_cross
                .initial
                .iter()
                .map(|x| Sim2::new(x.x() + 0.08, x.y() - 0.06, x.theta() + 0.07, x.scale()))
                .collect();
            let mut with_cross = with_cross;
            with_cross.initial = perturbed.clone();
            without_cross.initial = perturbed;

            let loop_error = |params: &[Sim2]| {
                let rel = relative_calibration(&params[0], &params[1]);
                let direct = solve_pairwise(&with_cross.cross_obs[0].pairs)
                    .unwrap()
                    .params;
                (rel.x() - direct.x()).abs()
                    + (rel.y() - direct.y()).abs()
                    + normalize_angle(rel.theta() - direct.theta()).abs()
                    + (rel.scale() - direct.scale()).abs()
            };
            let (with_s, _) = joint_refine(&with_cross).unwrap();
            let (without_s, _) = joint_refine(&without_cross).unwrap();
            assert!(loop_error(&with_s) <= loop_error(&without_s) + 1e-9);
        }
    }

    #[test]
    fn huge_cauchy_scale_matches_plain_least_squares() {
        let mut rng = StdRng::seed_from_u64(137);
        let (mut problem, _) = exact_problem(&mut rng, false);
        // Perturb observations mildly so the optimum is nontrivial.
        for obs in &mut problem.reference_obs {
            for pair in obs.iter_mut() {
                *pair = MotionPair::new(
                    Pose2::new(
                        pair.p_ref.x() + rng.gen_range(-0.003..0.003),
                        pair.p_ref.y() + rng.gen_range(-0.003..0.003),
                        pair.p_ref.theta(),
                    ),
                    pair.p_other,
                    pair.k,
                );
            }
        }
        problem.initial = problem
            .initial
            .iter()
            .map(|x| Sim2::new(x.x() + 0.05, x.y(), x.theta() - 0.05, x.scale() * 0.95))
            .collect();

        let mut squared = problem.clone();
        squared.loss = Loss::Squared;
        let mut wide = problem;
        wide.loss = Loss::Cauchy { scale: 1e9 };

        let (a, _) = joint_refine(&squared).unwrap();
        let (b, _) = joint_refine(&wide).unwrap();
        for (xa, xb) in a.iter().zip(&b) {
            assert!((xa.x() - xb.x()).abs() < 1e-8);
            assert!((xa.y() - xb.y()).abs() < 1e-8);
            assert!(normalize_angle(xa.theta() - xb.theta()).abs() < 1e-8);
            assert!((xa.scale() - xb.scale()).abs() < 1e-8 * xa.scale());
        }
    }

    #[test]
    fn validation_rejects_nonmetric_cross_first_sensor() {
        let mut rng = StdRng::seed_from_u64(139);
        let (mut problem, _) = exact_problem(&mut rng, true);
        problem.metric[1] = false;
        assert!(problem.validate().is_err());
    }
}
