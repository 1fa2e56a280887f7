//! Gamma and log-normal models for squared distortion: moment matching (EF),
//! maximum likelihood (MLF), likelihoods, and conservative 95th percentiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::DistortionStats;
use crate::special::{digamma, gamma_quantile, ln_gamma, normal_quantile, trigamma};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gamma,
    Lognormal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Ef,
    Mlf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FitParams {
    Gamma { shape: f64, scale: f64 },
    Lognormal { mu: f64, sigma: f64 },
}

impl FitParams {
    pub fn family(&self) -> Family {
        match self {
            FitParams::Gamma { .. } => Family::Gamma,
            FitParams::Lognormal { .. } => Family::Lognormal,
        }
    }

    /// (mean, variance) of the fitted distribution.
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            FitParams::Gamma { shape, scale } => (shape * scale, shape * scale * scale),
            FitParams::Lognormal { mu, sigma } => {
                let s2 = sigma * sigma;
                let m = (mu + s2 / 2.0).exp();
                (m, s2.exp_m1() * m * m)
            }
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        match *self {
            FitParams::Gamma { shape, scale } => {
                (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
            }
            FitParams::Lognormal { mu, sigma } => {
                let z = (x.ln() - mu) / sigma;
                -x.ln() - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
            }
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            FitParams::Gamma { shape, scale } => gamma_quantile(p, shape, scale),
            FitParams::Lognormal { mu, sigma } => (mu + sigma * normal_quantile(p)).exp(),
        }
    }
}

fn check_moments(m: f64, v: f64) -> Result<()> {
    if !(m > 0.0 && m.is_finite()) || !(v >= 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!("moments (m = {m}, v = {v}) must be positive and finite")));
    }
    if v == 0.0 {
        return Err(Error::Degenerate(format!("zero variance: point mass at {m}")));
    }
    Ok(())
}

/// Gamma matching mean `m` and variance `v`.
pub fn ef_gamma(m: f64, v: f64) -> Result<FitParams> {
    check_moments(m, v)?;
    Ok(FitParams::Gamma {
        shape: m * m / v,
        scale: v / m,
    })
}

/// Log-normal matching mean `m` and variance `v`.
pub fn ef_lognormal(m: f64, v: f64) -> Result<FitParams> {
    check_moments(m, v)?;
    let r = v / (m * m);
    Ok(FitParams::Lognormal {
        mu: m.ln() - 0.5 * r.ln_1p(),
        sigma: r.ln_1p().sqrt(),
    })
}

pub fn ef(family: Family, m: f64, v: f64) -> Result<FitParams> {
    match family {
        Family::Gamma => ef_gamma(m, v),
        Family::Lognormal => ef_lognormal(m, v),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    pub value: f64,
    /// Nonpositive samples left out of the sum.
    pub excluded: usize,
}

/// Σ ln f(x_i), skipping samples outside the support.
pub fn log_likelihood(samples: &[f64], params: &FitParams) -> LogLikelihood {
    let mut value = 0.0;
    let mut excluded = 0;
    for &x in samples {
        if x > 0.0 {
            value += params.ln_pdf(x);
        } else {
            excluded += 1;
        }
    }
    LogLikelihood { value, excluded }
}

const MLE_MAX_ITER: usize = 100;

/// Maximum-likelihood fit over the positive samples.
pub fn mlf(samples: &[f64], family: Family) -> Result<FitParams> {
    let pos: Vec<f64> = samples.iter().copied().filter(|&x| x > 0.0).collect();
    if pos.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 positive samples, got {}", pos.len())));
    }
    let n = pos.len() as f64;
    let mean_ln = pos.iter().map(|x| x.ln()).sum::<f64>() / n;
    match family {
        Family::Lognormal => {
            let var = pos.iter().map(|x| (x.ln() - mean_ln).powi(2)).sum::<f64>() / n;
            if var == 0.0 {
                return Err(Error::Degenerate("identical samples".into()));
            }
            Ok(FitParams::Lognormal {
                mu: mean_ln,
                sigma: var.sqrt(),
            })
        }
        Family::Gamma => {
            let mean = pos.iter().sum::<f64>() / n;
            let s = mean.ln() - mean_ln;
            if !(s > 0.0) {
                return Err(Error::Degenerate("identical samples".into()));
            }
            // Closed-form starting point, then Newton on ln α − ψ(α) = s.
            let mut a = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
            for _ in 0..MLE_MAX_ITER {
                let f = a.ln() - digamma(a) - s;
                let df = 1.0 / a - trigamma(a);
                let mut next = a - f / df;
                if !(next > 0.0) {
                    next = a / 2.0;
                }
                let done = (next - a).abs() <= 1e-13 * a;
                a = next;
                if done {
                    return Ok(FitParams::Gamma {
                        shape: a,
                        scale: mean / a,
                    });
                }
            }
            Err(Error::NoConvergence(format!("gamma shape after {MLE_MAX_ITER} Newton steps")))
        }
    }
}

pub fn percentile95(params: &FitParams) -> f64 {
    params.quantile(0.95)
}

/// 95th percentile of V from the moments of V², taking the larger of the
/// gamma and log-normal estimates. A point mass returns √m.
pub fn cell_p95(m: f64, v: f64) -> (f64, Option<Family>) {
    if !(m > 0.0) {
        return (0.0, None);
    }
    if !(v > 0.0) {
        return (m.sqrt(), None);
    }
    let g = percentile95(&ef_gamma(m, v).expect("checked moments"));
    let l = percentile95(&ef_lognormal(m, v).expect("checked moments"));
    if g >= l {
        (g.sqrt(), Some(Family::Gamma))
    } else {
        (l.sqrt(), Some(Family::Lognormal))
    }
}

/// Estimated 95th percentiles of V_HD: one column per order, then THD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentileEstimate {
    pub harmonics: Vec<u32>,
    /// `[bus][column]`, fraction of rated voltage.
    pub p95: Vec<Vec<f64>>,
    pub family: Vec<Vec<Option<Family>>>,
}

impl PercentileEstimate {
    pub fn thd(&self, bus: usize) -> f64 {
        *self.p95[bus].last().expect("THD column")
    }

    pub fn column_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.harmonics.iter().map(|h| format!("ihd{h}")).collect();
        out.push("thd".into());
        out
    }
}

pub fn vhd_p95(stats: &DistortionStats) -> PercentileEstimate {
    let cols = stats.columns();
    let n = stats.e_thd2.len();
    let mut p95 = vec![Vec::with_capacity(cols.len()); n];
    let mut family = vec![Vec::with_capacity(cols.len()); n];
    for (e, v) in &cols {
        for b in 0..n {
            let (p, f) = cell_p95(e[b], v[b]);
            p95[b].push(p);
            family[b].push(f);
        }
    }
    PercentileEstimate {
        harmonics: stats.harmonics.clone(),
        p95,
        family,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ef_gamma_arithmetic() {
        assert_eq!(ef_gamma(1.0, 1.0).unwrap(), FitParams::Gamma { shape: 1.0, scale: 1.0 });
        assert_eq!(ef_gamma(2.0, 4.0).unwrap(), FitParams::Gamma { shape: 1.0, scale: 2.0 });
        assert!(matches!(ef_gamma(1.0, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ef_lognormal_standard() {
        let e = std::f64::consts::E;
        match ef_lognormal(e.sqrt(), (e - 1.0) * e).unwrap() {
            FitParams::Lognormal { mu, sigma } => {
                assert!(mu.abs() < 1e-14);
                assert_relative_eq!(sigma, 1.0, max_relative = 1e-14);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn lognormal_small_variance_limit() {
        let (m, v) = (2.0, 1e-10);
        if let FitParams::Lognormal { sigma, .. } = ef_lognormal(m, v).unwrap() {
            assert_relative_eq!(sigma, v.sqrt() / m, max_relative = 1e-8);
        }
    }

    #[test]
    fn quantiles() {
        let g = FitParams::Gamma { shape: 1.0, scale: 1.0 };
        assert!((percentile95(&g) - 20f64.ln()).abs() < 1e-10);
        let l = FitParams::Lognormal { mu: 0.0, sigma: 1.0 };
        assert!((percentile95(&l) - 1.6448536269514722f64.exp()).abs() < 1e-9);
        assert_relative_eq!(percentile95(&l), 5.180, max_relative = 1e-3);
    }

    #[test]
    fn exponential_density() {
        let g = FitParams::Gamma { shape: 1.0, scale: 1.0 };
        assert_relative_eq!(log_likelihood(&[0.5], &g).value, -0.5, max_relative = 1e-14);
        let ll = log_likelihood(&[0.5, 0.0, -1.0], &g);
        assert_eq!(ll.excluded, 2);
    }

    #[test]
    fn lognormal_mle_closed_form() {
        let e = std::f64::consts::E;
        match mlf(&[1.0 / e, e], Family::Lognormal).unwrap() {
            FitParams::Lognormal { mu, sigma } => {
                assert!(mu.abs() < 1e-15);
                assert_relative_eq!(sigma, 1.0, max_relative = 1e-15);
            }
            _ => unreachable!(),
        }
    }

    fn gamma_draws(shape: f64, scale: f64, n: usize, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| gamma_quantile(rng.random::<f64>(), shape, scale))
            .collect()
    }

    #[test]
    fn gamma_mle_recovers_parameters() {
        let xs = gamma_draws(2.0, 3.0, 200_000, 5);
        match mlf(&xs, Family::Gamma).unwrap() {
            FitParams::Gamma { shape, scale } => {
                assert_relative_eq!(shape, 2.0, max_relative = 0.01);
                assert_relative_eq!(scale, 3.0, max_relative = 0.01);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn mle_beats_moment_fit() {
        let xs = gamma_draws(1.7, 0.4, 20_000, 9);
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        for fam in [Family::Gamma, Family::Lognormal] {
            let a = log_likelihood(&xs, &mlf(&xs, fam).unwrap()).value;
            let b = log_likelihood(&xs, &ef(fam, m, v).unwrap()).value;
            assert!(a >= b);
        }
    }

    #[test]
    fn degenerate_cell_returns_mean() {
        assert_eq!(cell_p95(0.04, 0.0), (0.2, None));
        assert_eq!(cell_p95(0.0, 0.0), (0.0, None));
    }

    proptest! {
        #[test]
        fn ef_round_trips(lm in -12.0f64..2.0, lr in -6.0f64..3.0) {
            let m = 10f64.powf(lm);
            let v = m * m * 10f64.powf(lr);
            for fam in [Family::Gamma, Family::Lognormal] {
                let (m2, v2) = ef(fam, m, v).unwrap().moments();
                prop_assert!((m2 - m).abs() <= 1e-12 * m);
                prop_assert!((v2 - v).abs() <= 1e-12 * v);
            }
        }

        #[test]
        fn conservative_and_above_mean(lm in -10.0f64..0.0, lr in -3.0f64..1.0) {
            let m = 10f64.powf(lm);
            let v = m * m * 10f64.powf(lr);
            let (p, _) = cell_p95(m, v);
            let g = percentile95(&ef_gamma(m, v).unwrap());
            let l = percentile95(&ef_lognormal(m, v).unwrap());
            prop_assert!(p * p >= g * (1.0 - 1e-12) && p * p >= l * (1.0 - 1e-12));
            prop_assert!(g >= m && l >= m);
        }

        #[test]
        fn p95_increases_with_mean(m in 0.1f64..10.0, dm in 0.01f64..1.0, v in 0.01f64..4.0) {
            prop_assert!(cell_p95(m + dm, v).0 > cell_p95(m, v).0);
        }
    }
}
