//! Special-function helpers layered on `statrs`.

pub use statrs::function::beta::{beta_reg, inv_beta_reg, ln_beta};
pub use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};

use statrs::function::erf::erf_inv;

/// Trigamma function ψ'(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    // Recurrence ψ'(x) = ψ'(x + 1) + 1/x² until the asymptotic series is accurate.
    while x < 8.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number series in 1/x.
    let series = inv
        + 0.5 * inv2
        + inv * inv2
            * (1.0 / 6.0
                - inv2
                    * (1.0 / 30.0
                        - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0)))));
    acc + series
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(2.0 * p - 1.0)
}

/// Quantile of a gamma distribution by safeguarded Newton iteration on the
/// regularized lower incomplete gamma, bracketed so every step stays inside a
/// shrinking interval.
pub fn gamma_quantile(p: f64, shape: f64, scale: f64) -> f64 {
    debug_assert!(shape > 0.0 && scale > 0.0);
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let cdf = |x: f64| gamma_lr(shape, x);
    let ln_norm = ln_gamma(shape);
    let pdf = |x: f64| ((shape - 1.0) * x.ln() - x - ln_norm).exp();

    // Bracket in standardized units (scale = 1).
    let mut lo = 0.0;
    let mut hi = shape.max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = pdf(x);
        let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let converged = (next - x).abs() <= 1e-14 * next.abs() || (hi - lo) <= 1e-15 * hi;
        x = next;
        if converged {
            break;
        }
    }
    x * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trigamma_known_values() {
        // ψ'(1) = π²/6, ψ'(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert_relative_eq!(trigamma(1.0), pi2 / 6.0, max_relative = 1e-12);
        assert_relative_eq!(trigamma(0.5), pi2 / 2.0, max_relative = 1e-12);
        // derivative of digamma by central differences
        let x = 3.7;
        let h = 1e-5;
        let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
        assert_relative_eq!(trigamma(x), fd, max_relative = 1e-7);
    }

    #[test]
    fn exponential_quantile() {
        assert!((gamma_quantile(0.95, 1.0, 1.0) - 20f64.ln()).abs() < 1e-12);
        assert!((gamma_quantile(0.5, 1.0, 2.0) - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gamma_quantile_inverts_cdf() {
        for &shape in &[0.3, 1.0, 2.5, 40.0, 900.0] {
            for &p in &[0.01, 0.5, 0.95, 0.999] {
                let x = gamma_quantile(p, shape, 1.0);
                assert_relative_eq!(gamma_lr(shape, x), p, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn normal_quantile_95() {
        assert!((normal_quantile(0.95) - 1.6448536269514722).abs() < 1e-12);
    }
}
