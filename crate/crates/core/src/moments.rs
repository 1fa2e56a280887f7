//! Closed-form means and variances of squared voltage distortion and of the
//! system-wide indices, for independent α and uniform phases φ.
//!
//! With V_k = Σ_j U_kj α_j e^{i(θ_kj + φ_j)} the only surviving fourth-order
//! phase terms pair each injector with itself, which gives
//!
//! E[V²_k]   = Σ_j U²_kj μ2_j
//! Var[V²_k] = Σ_j U⁴_kj (μ4_j − μ2_j²) + Σ_{i≠j} U²_ki U²_kj μ2_i μ2_j
//!
//! and, with G = U_cᴴ U_c over the injector columns,
//!
//! Var[N·S_IHD] = Σ_i G²_ii (μ4_i − μ2_i²) + Σ_{i≠j} |G_ij|² μ2_i μ2_j.
//!
//! Orders are treated as independent, so THD and S_THD moments are sums over h.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::grid::AlphaDistribution;
use crate::harmonic::InjectionBasis;
use crate::linalg::CMatrix;

static CLAMPED: AtomicUsize = AtomicUsize::new(0);

/// Number of negative variances clamped to zero since process start.
pub fn clamped_variances() -> usize {
    CLAMPED.load(Ordering::Relaxed)
}

fn clamp(v: f64) -> f64 {
    if v < 0.0 {
        CLAMPED.fetch_add(1, Ordering::Relaxed);
        log::warn!("negative variance {v:e} clamped to zero");
        0.0
    } else {
        v
    }
}

/// Raw second and fourth moments (E[α²], E[α⁴]) of a scaled beta variable.
pub fn alpha_moments(d: &AlphaDistribution) -> (f64, f64) {
    match d.beta_shape() {
        None => {
            let m2 = d.mean * d.mean;
            (m2, m2 * m2)
        }
        Some((a, b)) => {
            let s = d.support_max;
            let ab = a + b;
            let r2 = a * (a + 1.0) / (ab * (ab + 1.0));
            let r4 = r2 * (a + 2.0) * (a + 3.0) / ((ab + 2.0) * (ab + 3.0));
            let s2 = s * s;
            (s2 * r2, s2 * s2 * r4)
        }
    }
}

/// μ2′ and μ4′ per harmonic slot and injector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaMoments {
    pub mu2: Vec<Vec<f64>>,
    pub mu4: Vec<Vec<f64>>,
}

impl AlphaMoments {
    pub fn from_basis(basis: &InjectionBasis) -> Self {
        let (mut mu2, mut mu4) = (Vec::new(), Vec::new());
        for k in 0..basis.harmonics.len() {
            let (a, b): (Vec<f64>, Vec<f64>) = (0..basis.injectors.len())
                .map(|j| alpha_moments(basis.alpha(k, j)))
                .unzip();
            mu2.push(a);
            mu4.push(b);
        }
        AlphaMoments { mu2, mu4 }
    }

    /// diag(μ2′).
    pub fn m(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.mu2[k]))
    }

    /// μ4′ on the diagonal, μ2′_i μ2′_j elsewhere.
    pub fn m_prime(&self, k: usize) -> DMatrix<f64> {
        let (m2, m4) = (&self.mu2[k], &self.mu4[k]);
        DMatrix::from_fn(m2.len(), m2.len(), |i, j| if i == j { m4[i] } else { m2[i] * m2[j] })
    }
}

pub fn expected_vihd2(basis: &InjectionBasis, mom: &AlphaMoments, k: usize) -> Vec<f64> {
    let u = &basis.u[k];
    (0..basis.n_buses)
        .map(|b| (0..u.ncols()).map(|j| u[(b, j)].powi(2) * mom.mu2[k][j]).sum())
        .collect()
}

pub fn var_vihd2(basis: &InjectionBasis, mom: &AlphaMoments, k: usize) -> Vec<f64> {
    let u = &basis.u[k];
    let (m2, m4) = (&mom.mu2[k], &mom.mu4[k]);
    (0..basis.n_buses)
        .map(|b| {
            let (mut mean, mut own, mut sq) = (0.0, 0.0, 0.0);
            for j in 0..u.ncols() {
                let u2 = u[(b, j)] * u[(b, j)];
                let t = u2 * m2[j];
                mean += t;
                sq += t * t;
                own += u2 * u2 * (m4[j] - m2[j] * m2[j]);
            }
            // mean² − Σ t² is the cross-injector sum Σ_{i≠j} t_i t_j.
            clamp(own + (mean * mean - sq))
        })
        .collect()
}

/// Per-bus variance exactly as the textbook matrix form
/// 2·diag(U M Uᵀ)² + U⁴(μ4 − 2μ2²) − (U²μ2)²; kept as a cross-check.
pub fn var_vihd2_matrix_form(basis: &InjectionBasis, mom: &AlphaMoments, k: usize) -> Vec<f64> {
    let u = &basis.u[k];
    let umu = u * mom.m(k) * u.transpose();
    let e = expected_vihd2(basis, mom, k);
    (0..basis.n_buses)
        .map(|b| {
            let quartic: f64 = (0..u.ncols())
                .map(|j| u[(b, j)].powi(4) * (mom.mu4[k][j] - 2.0 * mom.mu2[k][j].powi(2)))
                .sum();
            2.0 * umu[(b, b)].powi(2) + quartic - e[b] * e[b]
        })
        .collect()
}

/// (E[S_IHD], Var[S_IHD]) for harmonic slot `k`.
pub fn sihd_stats(basis: &InjectionBasis, mom: &AlphaMoments, k: usize) -> (f64, f64) {
    let n = basis.n_buses as f64;
    let uc = basis.complex(k);
    let g = uc.adjoint() * &uc;
    let (m2, m4) = (&mom.mu2[k], &mom.mu4[k]);
    let j = m2.len();
    let mut mean = 0.0;
    let mut var = 0.0;
    for a in 0..j {
        let gaa = g[(a, a)].re;
        mean += gaa * m2[a];
        var += gaa * gaa * (m4[a] - m2[a] * m2[a]);
        for b in 0..j {
            if a != b {
                var += g[(a, b)].norm_sqr() * m2[a] * m2[b];
            }
        }
    }
    (mean / n, clamp(var) / (n * n))
}

/// Var[S_IHD] with the trace term built from U_c·`weight`, as in
/// (1/N²)[eᵀ((U²ᵀeeᵀU²)∘M′)e + Re tr(A G − A∘G) − (eᵀU²μ2)²], A = (U_c W)ᴴ(U_c W).
/// `W = diag(μ2)` reproduces [`sihd_stats`]; `W = M′` does not.
pub fn var_sihd_trace_form(basis: &InjectionBasis, mom: &AlphaMoments, k: usize, weight: &DMatrix<f64>) -> f64 {
    let n = basis.n_buses as f64;
    let uc = basis.complex(k);
    let u2 = basis.u[k].map(|x| x * x);
    let col: Vec<f64> = (0..u2.ncols()).map(|j| u2.column(j).sum()).collect();
    let mp = mom.m_prime(k);
    let mut first = 0.0;
    for a in 0..col.len() {
        for b in 0..col.len() {
            first += col[a] * col[b] * mp[(a, b)];
        }
    }
    let w: CMatrix = weight.map(|x| num_complex::Complex64::new(x, 0.0));
    let ucw = &uc * w;
    let a = ucw.adjoint() * &ucw;
    let g = uc.adjoint() * &uc;
    let ag = &a * &g;
    let mut trace = 0.0;
    for i in 0..col.len() {
        trace += ag[(i, i)].re - (a[(i, i)] * g[(i, i)]).re;
    }
    let mean: f64 = col.iter().zip(&mom.mu2[k]).map(|(c, m)| c * m).sum();
    (first + trace - mean * mean) / (n * n)
}

/// Sums per-order (E, Var) pairs; exact when orders are independent.
pub fn sum_orders<'a>(stats: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> (Vec<f64>, Vec<f64>) {
    let mut e: Vec<f64> = Vec::new();
    let mut v: Vec<f64> = Vec::new();
    for (eh, vh) in stats {
        if e.is_empty() {
            e = vec![0.0; eh.len()];
            v = vec![0.0; vh.len()];
        }
        for (acc, x) in e.iter_mut().zip(eh) {
            *acc += x;
        }
        for (acc, x) in v.iter_mut().zip(vh) {
            *acc += x;
        }
    }
    (e, v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionStats {
    pub harmonics: Vec<u32>,
    /// `[slot][bus]`.
    pub e_ihd2: Vec<Vec<f64>>,
    pub var_ihd2: Vec<Vec<f64>>,
    pub e_thd2: Vec<f64>,
    pub var_thd2: Vec<f64>,
    pub e_sihd: Vec<f64>,
    pub var_sihd: Vec<f64>,
    pub e_sthd: f64,
    pub var_sthd: f64,
}

impl DistortionStats {
    /// (mean, variance) columns per bus: one per order, then THD.
    pub fn columns(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out: Vec<(Vec<f64>, Vec<f64>)> = self
            .e_ihd2
            .iter()
            .zip(&self.var_ihd2)
            .map(|(e, v)| (e.clone(), v.clone()))
            .collect();
        out.push((self.e_thd2.clone(), self.var_thd2.clone()));
        out
    }
}

pub fn analyze(basis: &InjectionBasis) -> DistortionStats {
    let mom = AlphaMoments::from_basis(basis);
    analyze_with(basis, &mom)
}

pub fn analyze_with(basis: &InjectionBasis, mom: &AlphaMoments) -> DistortionStats {
    let slots = 0..basis.harmonics.len();
    let e_ihd2: Vec<Vec<f64>> = slots.clone().map(|k| expected_vihd2(basis, mom, k)).collect();
    let var_ihd2: Vec<Vec<f64>> = slots.clone().map(|k| var_vihd2(basis, mom, k)).collect();
    let (e_thd2, var_thd2) = if basis.harmonics.is_empty() {
        (vec![0.0; basis.n_buses], vec![0.0; basis.n_buses])
    } else {
        sum_orders(e_ihd2.iter().zip(&var_ihd2).map(|(e, v)| (e.as_slice(), v.as_slice())))
    };
    let (e_sihd, var_sihd): (Vec<f64>, Vec<f64>) = slots.map(|k| sihd_stats(basis, mom, k)).unzip();
    DistortionStats {
        harmonics: basis.harmonics.clone(),
        e_sthd: e_sihd.iter().sum(),
        var_sthd: var_sihd.iter().sum(),
        e_ihd2,
        var_ihd2,
        e_thd2,
        var_thd2,
        e_sihd,
        var_sihd,
    }
}

/// E[S_THD] only, the search objective; skips all variance work.
pub fn expected_sthd(basis: &InjectionBasis) -> f64 {
    let n = basis.n_buses as f64;
    (0..basis.harmonics.len())
        .map(|k| {
            let u = &basis.u[k];
            (0..u.ncols())
                .map(|j| alpha_moments(basis.alpha(k, j)).0 * u.column(j).norm_squared())
                .sum::<f64>()
                / n
        })
        .sum()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::harmonic::Injector;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    /// Synthetic basis: `u[k]` is N × J, one injector per column.
    pub(crate) fn basis(harmonics: Vec<u32>, u: Vec<DMatrix<f64>>, theta: Vec<DMatrix<f64>>, alphas: Vec<Vec<AlphaDistribution>>) -> InjectionBasis {
        let n = u[0].nrows();
        let j = u[0].ncols();
        let injectors = (0..j)
            .map(|c| Injector {
                bus: c as u32 + 1,
                index: c,
                current: 1.0,
                angle: 0.0,
                spectrum: harmonics.iter().enumerate().map(|(k, &h)| (h, alphas[k][c])).collect::<BTreeMap<_, _>>(),
            })
            .collect();
        InjectionBasis { harmonics, n_buses: n, injectors, u, theta }
    }

    #[test]
    fn deterministic_and_uniform_moments() {
        let (m2, m4) = alpha_moments(&AlphaDistribution::point(0.3));
        assert_eq!(m2, 0.09);
        assert_eq!(m4, 0.09 * 0.09);
        let u = AlphaDistribution::new(0.5, (1.0f64 / 12.0).sqrt(), 1.0).unwrap();
        let (m2, m4) = alpha_moments(&u);
        assert_relative_eq!(m2, 1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(m4, 1.0 / 5.0, max_relative = 1e-12);
    }

    #[test]
    fn single_injector() {
        let b = basis(
            vec![5],
            vec![DMatrix::from_element(1, 1, 0.7)],
            vec![DMatrix::from_element(1, 1, 0.4)],
            vec![vec![AlphaDistribution::new(0.02, 0.01, 0.08).unwrap()]],
        );
        let mom = AlphaMoments::from_basis(&b);
        let e = expected_vihd2(&b, &mom, 0);
        assert_relative_eq!(e[0], 0.49 * mom.mu2[0][0], max_relative = 1e-14);
        let s = analyze(&b);
        assert_relative_eq!(s.e_sihd[0], e[0], max_relative = 1e-14);
        assert_relative_eq!(s.var_sihd[0], s.var_ihd2[0][0], max_relative = 1e-12);
    }

    #[test]
    fn deterministic_single_injector_has_zero_variance() {
        let b = basis(
            vec![5],
            vec![DMatrix::from_element(3, 1, 0.123456789)],
            vec![DMatrix::from_element(3, 1, 1.1)],
            vec![vec![AlphaDistribution::point(0.0173)]],
        );
        let s = analyze(&b);
        assert!(s.var_ihd2[0].iter().all(|&v| v == 0.0));
        assert_eq!(s.var_sihd[0], 0.0);
    }

    #[test]
    fn two_equal_deterministic_injectors() {
        // V² = u²a²|1 + e^{iψ}|² = 2u²a²(1 + cos ψ) with ψ uniform: Var = 2u⁴a⁴.
        let (u, a) = (0.3, 0.05);
        let b = basis(
            vec![5],
            vec![DMatrix::from_element(1, 2, u)],
            vec![DMatrix::from_row_slice(1, 2, &[0.2, 1.7])],
            vec![vec![AlphaDistribution::point(a); 2]],
        );
        let s = analyze(&b);
        // Numerical integration over the phase difference.
        let m = 20000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..m {
            let psi = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / m as f64;
            let v2 = 2.0 * u * u * a * a * (1.0 + psi.cos());
            s1 += v2;
            s2 += v2 * v2;
        }
        let (mean, var) = (s1 / m as f64, s2 / m as f64 - (s1 / m as f64).powi(2));
        assert_relative_eq!(s.var_ihd2[0][0], 2.0 * u.powi(4) * a.powi(4), max_relative = 1e-12);
        assert_relative_eq!(s.var_ihd2[0][0], var, max_relative = 1e-9);
        assert_relative_eq!(s.e_ihd2[0][0], mean, max_relative = 1e-9);
    }

    #[test]
    fn zero_basis_is_zero() {
        let b = basis(
            vec![3, 5],
            vec![DMatrix::zeros(4, 2), DMatrix::zeros(4, 2)],
            vec![DMatrix::zeros(4, 2), DMatrix::zeros(4, 2)],
            vec![vec![AlphaDistribution::point(0.1); 2]; 2],
        );
        let s = analyze(&b);
        assert!(s.e_thd2.iter().chain(&s.var_thd2).all(|&x| x == 0.0));
        assert_eq!(s.e_sthd, 0.0);
    }

    #[test]
    fn equal_orders_double() {
        let u = DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.05, 0.3]);
        let t = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        let a = AlphaDistribution::new(0.02, 0.01, 0.08).unwrap();
        let one = analyze(&basis(vec![5], vec![u.clone()], vec![t.clone()], vec![vec![a; 2]]));
        let two = analyze(&basis(vec![5, 7], vec![u.clone(), u], vec![t.clone(), t], vec![vec![a; 2]; 2]));
        assert_eq!(one.e_thd2, one.e_ihd2[0]);
        for i in 0..2 {
            assert_relative_eq!(two.e_thd2[i], 2.0 * one.e_thd2[i], max_relative = 1e-15);
            assert_relative_eq!(two.var_thd2[i], 2.0 * one.var_thd2[i], max_relative = 1e-15);
        }
        assert_relative_eq!(two.e_sthd, 2.0 * one.e_sthd, max_relative = 1e-15);
        assert_relative_eq!(two.var_sthd, 2.0 * one.var_sthd, max_relative = 1e-15);
    }

    fn random_basis(n: usize, j: usize, seed: u64) -> InjectionBasis {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u = DMatrix::from_fn(n, j, |_, _| rng.random_range(0.0..1.0));
        let t = DMatrix::from_fn(n, j, |_, _| rng.random_range(0.0..6.28));
        let alphas = (0..j)
            .map(|_| {
                let m = rng.random_range(0.01..0.05);
                AlphaDistribution::new(m, m * 0.5, 0.1).unwrap()
            })
            .collect();
        basis(vec![5], vec![u], vec![t], vec![alphas])
    }

    #[test]
    fn matrix_forms_agree() {
        let b = random_basis(5, 3, 7);
        let mom = AlphaMoments::from_basis(&b);
        let direct = var_vihd2(&b, &mom, 0);
        let printed = var_vihd2_matrix_form(&b, &mom, 0);
        for (d, p) in direct.iter().zip(&printed) {
            assert_relative_eq!(d, p, max_relative = 1e-10);
        }
        let (_, v) = sihd_stats(&b, &mom, 0);
        assert_relative_eq!(var_sihd_trace_form(&b, &mom, 0, &mom.m(0)), v, max_relative = 1e-10);
        let with_mp = var_sihd_trace_form(&b, &mom, 0, &mom.m_prime(0));
        assert!((with_mp - v).abs() > 1e-3 * v);
    }

    #[test]
    fn expected_sthd_shortcut() {
        let b = random_basis(6, 4, 11);
        assert_relative_eq!(expected_sthd(&b), analyze(&b).e_sthd, max_relative = 1e-13);
    }

    proptest! {
        #[test]
        fn scaling_alpha(c in 0.2f64..3.0, seed in 0u64..1000) {
            let b = random_basis(4, 3, seed);
            let mut scaled = b.clone();
            for inj in &mut scaled.injectors {
                for d in inj.spectrum.values_mut() {
                    *d = d.scaled(c);
                }
            }
            let (s0, s1) = (analyze(&b), analyze(&scaled));
            for i in 0..4 {
                prop_assert!((s1.e_ihd2[0][i] - c * c * s0.e_ihd2[0][i]).abs() <= 1e-12 * s1.e_ihd2[0][i]);
                prop_assert!((s1.var_ihd2[0][i] - c.powi(4) * s0.var_ihd2[0][i]).abs() <= 1e-10 * s1.var_ihd2[0][i]);
            }
        }

        #[test]
        fn permutation_equivariance(seed in 0u64..1000) {
            let b = random_basis(4, 3, seed);
            let perm = [2usize, 0, 3, 1];
            let mut p = b.clone();
            p.u[0] = DMatrix::from_fn(4, 3, |r, c| b.u[0][(perm[r], c)]);
            p.theta[0] = DMatrix::from_fn(4, 3, |r, c| b.theta[0][(perm[r], c)]);
            let (s0, s1) = (analyze(&b), analyze(&p));
            for r in 0..4 {
                prop_assert!((s1.e_ihd2[0][r] - s0.e_ihd2[0][perm[r]]).abs() <= 1e-15);
                prop_assert!((s1.var_ihd2[0][r] - s0.var_ihd2[0][perm[r]]).abs() <= 1e-15);
            }
            prop_assert!((s1.var_sthd - s0.var_sthd).abs() <= 1e-12 * s0.var_sthd);
        }

        #[test]
        fn jensen_and_nonnegativity(m in 0.001f64..0.05, frac in 0.05f64..0.9) {
            let support = 0.1;
            let sd = frac * (m * (support - m)).sqrt();
            let d = AlphaDistribution::new(m, sd, support).unwrap();
            let (m2, m4) = alpha_moments(&d);
            prop_assert!(m2 > 0.0 && m4 >= m2 * m2);
        }
    }
}
