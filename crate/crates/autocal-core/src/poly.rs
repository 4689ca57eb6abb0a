//! Real-root extraction for the low-degree characteristic polynomials of
//! the constrained solvers.
//!
//! Complex-conjugate root pairs whose imaginary part is below
//! `1e-9 * |real part|` are accepted as a numerically perturbed real root;
//! anything larger is treated as genuinely complex and dropped.

/// Relative imaginary-part acceptance for nearly-real roots.
const IMAG_ACCEPT: f64 = 1e-9;

/// Real roots of `c2 x^2 + c1 x + c0 = 0`, in ascending order.
///
/// A leading coefficient that is negligible relative to the others degrades
/// the polynomial to linear (or to no equation at all).
pub(crate) fn real_roots_quadratic(c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    let scale = c2.abs().max(c1.abs()).max(c0.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if c2.abs() < 1e-14 * scale {
        if c1.abs() < 1e-14 * scale {
            return Vec::new();
        }
        return vec![-c0 / c1];
    }
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if disc >= 0.0 {
        let sqrt_d = disc.sqrt();
        // Citardauq form for the root that would suffer cancellation.
        let q = -0.5 * (c1 + c1.signum() * sqrt_d);
        let mut roots = if q == 0.0 {
            vec![0.0, 0.0]
        } else {
            vec![q / c2, c0 / q]
        };
        roots.sort_by(f64::total_cmp);
        roots
    } else {
        let real = -c1 / (2.0 * c2);
        let imag = (-disc).sqrt() / (2.0 * c2.abs());
        if imag <= IMAG_ACCEPT * real.abs() {
            vec![real, real]
        } else {
            Vec::new()
        }
    }
}

/// Real roots of `c3 x^3 + c2 x^2 + c1 x + c0 = 0`, ascending, via the
/// trigonometric method (three real roots) or Cardano (one real root).
pub(crate) fn real_roots_cubic(c3: f64, c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    let scale = c3.abs().max(c2.abs()).max(c1.abs()).max(c0.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if c3.abs() < 1e-14 * scale {
        return real_roots_quadratic(c2, c1, c0);
    }

    // Depressed form t^3 + p t + q with x = t - b/3.
    let b = c2 / c3;
    let c = c1 / c3;
    let d = c0 / c3;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let shift = -b / 3.0;

    let disc = -4.0 * p * p * p - 27.0 * q * q;
    let mut roots = if disc > 0.0 {
        // Three distinct real roots.
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
            .collect::<Vec<_>>()
    } else {
        // One real root (Cardano); the complex pair sits at
        // -t0/2 +- i*sqrt(3)/2 * (u - v).
        let half_q = q / 2.0;
        let inner = half_q * half_q + p * p * p / 27.0;
        let (t0, imag_pair) = if inner >= 0.0 {
            let s = inner.sqrt();
            let u = (-half_q + s).cbrt();
            let v = (-half_q - s).cbrt();
            (u + v, 3f64.sqrt() / 2.0 * (u - v).abs())
        } else {
            // Borderline triple/double root territory: fall back to trig.
            let m = 2.0 * (-p / 3.0).max(0.0).sqrt();
            let arg = if p == 0.0 {
                1.0
            } else {
                (3.0 * q / (p * m)).clamp(-1.0, 1.0)
            };
            (m * (arg.acos() / 3.0).cos(), 0.0)
        };
        let mut out = vec![t0 + shift];
        let pair_real = -t0 / 2.0 + shift;
        if imag_pair <= IMAG_ACCEPT * pair_real.abs() {
            out.push(pair_real);
            out.push(pair_real);
        }
        out
    };
    roots.sort_by(f64::total_cmp);

    // One Newton step per root tightens the trig/Cardano results.
    for r in &mut roots {
        let f = ((c3 * *r + c2) * *r + c1) * *r + c0;
        let df = (3.0 * c3 * *r + 2.0 * c2) * *r + c1;
        if df != 0.0 {
            let step = f / df;
            if step.is_finite() {
                *r -= step;
            }
        }
    }
    roots
}
