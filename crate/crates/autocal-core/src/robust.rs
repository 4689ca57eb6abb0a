//! RANSAC robustification of the pairwise closed-form solver.
//!
//! The hypothesize-and-verify loop samples minimal motion-pair subsets,
//! solves each in closed form, and classifies inliers with the translation
//! error expressed in the reference sensor's metric space, so the threshold
//! has an intuitive unit (meters) regardless of the other sensor's scale.
//!
//! Determinism contract: each hypothesis draws from its own RNG stream
//! derived by counter from the seed, so results are bit-identical for a
//! fixed seed regardless of evaluation order.

use crate::geom::Sim2;
use crate::planar::{pairwise_cost, solve_pairwise};
use crate::sync::MotionPair;
use crate::CalibError;
use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Configuration of the RANSAC loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold on the metric translation error (meters, in
    /// reference-sensor space).
    pub threshold: f64,
    /// Hard cap on the number of hypotheses.
    pub max_iterations: usize,
    /// Minimal sample size; two linearly independent motions are the
    /// observability minimum.
    pub min_sample: usize,
    /// RNG seed; identical seeds give bit-identical results.
    pub seed: u64,
    /// Early-exit confidence on having sampled an all-inlier subset.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            max_iterations: 1000,
            min_sample: 2,
            seed: 0,
            confidence: 0.999,
        }
    }
}

impl RansacConfig {
    /// Checks the field invariants.
    pub fn validate(&self) -> Result<(), CalibError> {
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(CalibError::InvalidValue(format!(
                "RANSAC threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.max_iterations < 1 {
            return Err(CalibError::InvalidValue(
                "RANSAC needs at least one iteration".into(),
            ));
        }
        if self.min_sample < 2 {
            return Err(CalibError::InvalidValue(
                "RANSAC minimal sample must be at least 2".into(),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(CalibError::InvalidValue(format!(
                "RANSAC confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// Result of a robust pairwise estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustEstimate {
    /// Final calibration, refit on the consensus set.
    pub params: Sim2,
    /// Inlier classification aligned with the input pairs, evaluated once
    /// at the returned parameters.
    pub inlier_mask: Vec<bool>,
    /// Number of hypotheses evaluated.
    pub iterations_run: usize,
}

impl RobustEstimate {
    /// Number of inliers in the mask.
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

/// Translation component of the composed discrepancy
/// `p_ref - x ⊕ p_other ⊕ ⊖x`, expressed in reference-sensor (metric)
/// units.
pub fn translation_error(x: &Sim2, pair: &MotionPair) -> Vector2<f64> {
    let mapped = x.compose(&Sim2::from(pair.p_other)).compose(&x.inverse());
    Vector2::new(pair.p_ref.x() - mapped.x(), pair.p_ref.y() - mapped.y())
}

fn classify(x: &Sim2, pairs: &[MotionPair], threshold: f64) -> Vec<bool> {
    pairs
        .iter()
        .map(|p| translation_error(x, p).norm() < threshold)
        .collect()
}

/// Standard adaptive iteration bound: the number of samples needed to draw
/// at least one all-inlier subset with the configured confidence.
fn required_iterations(inlier_ratio: f64, min_sample: usize, confidence: f64) -> usize {
    if inlier_ratio <= 0.0 {
        return usize::MAX;
    }
    if inlier_ratio >= 1.0 {
        return 1;
    }
    let failure = 1.0 - inlier_ratio.powi(min_sample as i32);
    if failure <= 0.0 {
        return 1;
    }
    let n = (1.0 - confidence).ln() / failure.ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Draws `k` distinct indices from `0..n` out of a dedicated RNG stream.
fn sample_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k).into_vec()
}

/// Robust pairwise calibration: classic hypothesize-and-verify with
/// closed-form minimal solves, consensus maximization, and a final refit
/// on the best consensus set.
pub fn ransac_pairwise(
    pairs: &[MotionPair],
    cfg: &RansacConfig,
) -> Result<RobustEstimate, CalibError> {
    cfg.validate()?;
    if pairs.len() < cfg.min_sample {
        return Err(CalibError::InsufficientData(format!(
            "RANSAC needs at least {} pairs, got {}",
            cfg.min_sample,
            pairs.len()
        )));
    }

    // Degenerate minimal samples are redrawn inside the same hypothesis
    // slot without counting against the iteration budget, up to this cap.
    const DEGENERATE_RETRY_CAP: usize = 10;

    let mut best_hypothesis: Option<(usize, Sim2, Vec<bool>)> = None;
    let mut iterations_run = 0usize;
    let mut any_valid_solve = false;
    let mut needed = cfg.max_iterations;

    for hypothesis in 0..cfg.max_iterations {
        if hypothesis >= needed {
            break;
        }
        iterations_run += 1;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(hypothesis as u64 + 1);

        let mut solution = None;
        for _ in 0..DEGENERATE_RETRY_CAP {
            let idx = sample_indices(&mut rng, pairs.len(), cfg.min_sample);
            let sample: Vec<MotionPair> = idx.iter().map(|&i| pairs[i]).collect();
            match solve_pairwise(&sample) {
                Ok(sol) => {
                    solution = Some(sol);
                    break;
                }
                Err(_) => continue,
            }
        }
        let Some(sol) = solution else {
            continue;
        };
        any_valid_solve = true;

        let mask = classify(&sol.params, pairs, cfg.threshold);
        let count = mask.iter().filter(|&&b| b).count();
        let is_better = match &best_hypothesis {
            None => count > 0,
            Some((best_count, ..)) => count > *best_count,
        };
        if is_better {
            needed = required_iterations(
                count as f64 / pairs.len() as f64,
                cfg.min_sample,
                cfg.confidence,
            )
            .min(cfg.max_iterations);
            best_hypothesis = Some((count, sol.params, mask));
        }
    }

    let Some((count, hyp_params, hyp_mask)) = best_hypothesis else {
        if any_valid_solve {
            return Err(CalibError::ConsensusFailure {
                best_inliers: 0,
                required: cfg.min_sample + 1,
            });
        }
        return Err(CalibError::DegenerateGeometry(
            "every sampled hypothesis was degenerate".into(),
        ));
    };
    if count < cfg.min_sample + 1 {
        return Err(CalibError::ConsensusFailure {
            best_inliers: count,
            required: cfg.min_sample + 1,
        });
    }

    // Refit on the consensus set; fall back to the raw hypothesis if the
    // consensus set itself turns out degenerate, or if re-classifying at
    // the refit parameters would shrink the consensus below the minimum.
    let consensus: Vec<MotionPair> = pairs
        .iter()
        .zip(&hyp_mask)
        .filter(|(_, &keep)| keep)
        .map(|(p, _)| *p)
        .collect();
    let refit = solve_pairwise(&consensus).ok().map(|sol| {
        debug_assert!(
            pairwise_cost(&sol.params, &consensus) <= pairwise_cost(&hyp_params, &consensus) + 1e-9
        );
        let mask = classify(&sol.params, pairs, cfg.threshold);
        (sol.params, mask)
    });
    let (params, inlier_mask) = match refit {
        Some((params, mask)) if mask.iter().filter(|&&b| b).count() >= cfg.min_sample => {
            (params, mask)
        }
        _ => (hyp_params, classify(&hyp_params, pairs, cfg.threshold)),
    };

    Ok(RobustEstimate {
        params,
        inlier_mask,
        iterations_run,
    })
}
