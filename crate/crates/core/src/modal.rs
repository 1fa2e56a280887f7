//! Resonance mode analysis: eigen-decomposition of the harmonic admittance
//! matrix over a frequency sweep, mode tracking, critical peaks and bus
//! participation factors.

use nalgebra::linalg::Schur;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{BusId, StudyCase};
use crate::harmonic::assemble;
use crate::linalg::{self, CMatrix};
use crate::pf::PfSolution;
use crate::scenario::PlacementScenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalOptions {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub step_hz: f64,
    /// A peak is critical when it exceeds this multiple of the median modal
    /// impedance over all modes and steps in the window.
    pub threshold_factor: f64,
    /// Minimum eigenvector overlap for two steps to share a mode id.
    pub overlap: f64,
    pub execution: Execution,
}

impl Default for ModalOptions {
    fn default() -> Self {
        ModalOptions {
            f_min_hz: 120.0,
            f_max_hz: 480.0,
            step_hz: 1.0,
            threshold_factor: 3.0,
            overlap: 0.7,
            execution: Execution::default(),
        }
    }
}

/// Eigenvalues with right eigenvectors (unit columns) and their inverse.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub values: Vec<Complex64>,
    pub right: CMatrix,
    pub left: CMatrix,
}

impl EigenDecomposition {
    /// Participation of every bus in mode `m`: left_mk · right_km. Sums to 1.
    pub fn participation(&self, m: usize) -> Vec<Complex64> {
        (0..self.values.len()).map(|k| self.left[(m, k)] * self.right[(k, m)]).collect()
    }
}

/// Eigenvectors of the upper-triangular Schur factor by back-substitution.
fn triangular_eigenvectors(t: &CMatrix) -> CMatrix {
    let n = t.nrows();
    let scale = t.norm().max(f64::MIN_POSITIVE);
    let tiny = f64::EPSILON * scale;
    let mut w = CMatrix::zeros(n, n);
    for m in 0..n {
        let lambda = t[(m, m)];
        w[(m, m)] = Complex64::new(1.0, 0.0);
        for i in (0..m).rev() {
            let mut s = Complex64::new(0.0, 0.0);
            for l in i + 1..=m {
                s += t[(i, l)] * w[(l, m)];
            }
            let mut d = t[(i, i)] - lambda;
            if d.norm() < tiny {
                d = Complex64::new(tiny, 0.0);
            }
            w[(i, m)] = -s / d;
        }
    }
    w
}

pub fn eigen_decompose(y: &CMatrix) -> Result<EigenDecomposition> {
    let n = y.nrows();
    let schur = Schur::try_new(y.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NoConvergence("Schur decomposition".into()))?;
    let (q, t) = schur.unpack();
    let values: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    let mut right = q * triangular_eigenvectors(&t);
    for mut col in right.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= Complex64::new(norm, 0.0);
        }
    }
    let left = linalg::invert(right.clone()).map_err(|_| Error::Singular("defective eigenvector basis".into()))?;
    Ok(EigenDecomposition { values, right, left })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalStep {
    pub frequency_hz: f64,
    pub eigenvalues: Vec<Complex64>,
    /// Tracked mode id of each eigenvalue.
    pub mode_ids: Vec<usize>,
    /// Set when the decomposition failed at this step.
    pub skipped: Option<String>,
}

impl ModalStep {
    pub fn modal_impedance(&self, m: usize) -> f64 {
        1.0 / self.eigenvalues[m].norm()
    }

    /// Largest modal impedance and its eigenvalue index.
    pub fn envelope(&self) -> Option<(usize, f64)> {
        (0..self.eigenvalues.len())
            .map(|m| (m, self.modal_impedance(m)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalMode {
    pub mode_id: usize,
    pub frequency_hz: f64,
    pub eigenvalue: Complex64,
    pub modal_impedance: f64,
    /// Per bus in case order; empty when the eigenvalue is repeated.
    pub participation: Vec<Complex64>,
    pub degenerate: bool,
}

impl CriticalMode {
    /// Bus with the largest participation magnitude.
    pub fn dominant_bus(&self, buses: &[BusId]) -> Option<BusId> {
        self.participation
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| buses[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalResult {
    pub scenario_id: String,
    pub buses: Vec<BusId>,
    pub steps: Vec<ModalStep>,
    pub critical: Vec<CriticalMode>,
    pub threshold: f64,
}

impl ModalResult {
    /// Highest envelope value within `half_width_hz` of `frequency_hz`.
    pub fn peak_near(&self, frequency_hz: f64, half_width_hz: f64) -> Option<f64> {
        self.steps
            .iter()
            .filter(|s| s.skipped.is_none() && (s.frequency_hz - frequency_hz).abs() <= half_width_hz)
            .filter_map(|s| s.envelope().map(|e| e.1))
            .max_by(|a, b| a.total_cmp(b))
    }

    /// `frequency_hz,mode,modal_impedance` rows.
    pub fn impedance_csv(&self) -> String {
        let mut out = String::from("frequency_hz,mode,modal_impedance\n");
        for s in self.steps.iter().filter(|s| s.skipped.is_none()) {
            let mut rows: Vec<(usize, f64)> = (0..s.eigenvalues.len()).map(|m| (s.mode_ids[m], s.modal_impedance(m))).collect();
            rows.sort_by_key(|r| r.0);
            for (id, z) in rows {
                out.push_str(&format!("{},{id},{z:.10e}\n", s.frequency_hz));
            }
        }
        out
    }

    /// `mode,frequency_hz,bus,pf_re,pf_im,pf_abs` rows for the critical modes.
    pub fn participation_csv(&self) -> String {
        let mut out = String::from("mode,frequency_hz,bus,pf_re,pf_im,pf_abs\n");
        for c in &self.critical {
            for (p, bus) in c.participation.iter().zip(&self.buses) {
                out.push_str(&format!(
                    "{},{},{bus},{:.10e},{:.10e},{:.10e}\n",
                    c.mode_id,
                    c.frequency_hz,
                    p.re,
                    p.im,
                    p.norm()
                ));
            }
        }
        out
    }
}

fn overlap(a: &CMatrix, i: usize, b: &CMatrix, j: usize) -> f64 {
    a.column(i).dotc(&b.column(j)).norm()
}

fn is_repeated(values: &[Complex64], m: usize) -> bool {
    let tol = 1e-9 * values[m].norm().max(1e-12);
    values.iter().enumerate().any(|(i, v)| i != m && (v - values[m]).norm() <= tol)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

pub fn sweep_modes(
    case: &StudyCase,
    scenario: &PlacementScenario,
    pf: &PfSolution,
    opts: &ModalOptions,
) -> Result<ModalResult> {
    if !(opts.step_hz > 0.0 && opts.f_min_hz > 0.0 && opts.f_max_hz >= opts.f_min_hz) {
        return Err(Error::InvalidArgument(format!(
            "sweep {}..{} Hz step {}",
            opts.f_min_hz, opts.f_max_hz, opts.step_hz
        )));
    }
    scenario.designs(case)?;
    let f0 = case.config.fundamental_hz;
    let count = ((opts.f_max_hz - opts.f_min_hz) / opts.step_hz + 1e-9).floor() as usize + 1;
    let freqs: Vec<f64> = (0..count).map(|i| opts.f_min_hz + i as f64 * opts.step_hz).collect();
    let decomps: Vec<std::result::Result<EigenDecomposition, String>> = opts.execution.map(&freqs, |&f| {
        assemble(case, scenario, f / f0, pf)
            .and_then(|y| eigen_decompose(&y))
            .map_err(|e| e.to_string())
    });

    // Sequential tracking: greedy best-overlap matching against the previous step.
    let mut next_id = 0usize;
    let mut prev: Option<(CMatrix, Vec<usize>)> = None;
    let mut steps = Vec::with_capacity(count);
    for (&f, d) in freqs.iter().zip(&decomps) {
        match d {
            Err(msg) => {
                log::warn!("modal step {f} Hz skipped: {msg}");
                steps.push(ModalStep {
                    frequency_hz: f,
                    eigenvalues: Vec::new(),
                    mode_ids: Vec::new(),
                    skipped: Some(msg.clone()),
                });
            }
            Ok(d) => {
                let n = d.values.len();
                let mut ids = vec![usize::MAX; n];
                if let Some((pv, pids)) = &prev {
                    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
                    for m in 0..n {
                        for p in 0..pids.len() {
                            let o = overlap(&d.right, m, pv, p);
                            if o > opts.overlap {
                                pairs.push((o, m, p));
                            }
                        }
                    }
                    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                    let mut used = vec![false; pids.len()];
                    for (_, m, p) in pairs {
                        if ids[m] == usize::MAX && !used[p] {
                            ids[m] = pids[p];
                            used[p] = true;
                        }
                    }
                }
                for id in ids.iter_mut().filter(|id| **id == usize::MAX) {
                    *id = next_id;
                    next_id += 1;
                }
                prev = Some((d.right.clone(), ids.clone()));
                steps.push(ModalStep {
                    frequency_hz: f,
                    eigenvalues: d.values.clone(),
                    mode_ids: ids,
                    skipped: None,
                });
            }
        }
    }

    // Critical modes: interior local maxima of the envelope (largest modal
    // impedance per step) above the threshold.
    let env: Vec<Option<(usize, f64)>> = steps.iter().map(|s| if s.skipped.is_none() { s.envelope() } else { None }).collect();
    let mut values: Vec<f64> = steps
        .iter()
        .filter(|s| s.skipped.is_none())
        .flat_map(|s| (0..s.eigenvalues.len()).map(move |m| s.modal_impedance(m)))
        .collect();
    let threshold = opts.threshold_factor * median(&mut values);
    let mut critical = Vec::new();
    for i in 1..steps.len().saturating_sub(1) {
        let (Some((m, z)), Some((_, zl)), Some((_, zr))) = (env[i], env[i - 1], env[i + 1]) else {
            continue;
        };
        if z > zl && z >= zr && z > threshold {
            let d = decomps[i].as_ref().expect("step not skipped");
            let degenerate = is_repeated(&d.values, m);
            critical.push(CriticalMode {
                mode_id: steps[i].mode_ids[m],
                frequency_hz: steps[i].frequency_hz,
                eigenvalue: d.values[m],
                modal_impedance: z,
                participation: if degenerate { Vec::new() } else { d.participation(m) },
                degenerate,
            });
        }
    }
    Ok(ModalResult {
        scenario_id: scenario.id.clone(),
        buses: case.network.bus_ids(),
        steps,
        critical,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn check_decomposition(y: &CMatrix) {
        let d = eigen_decompose(y).unwrap();
        let scale = y.norm();
        for m in 0..y.nrows() {
            let v = d.right.column(m);
            let r = y * v - v * d.values[m];
            assert!(r.norm() < 1e-10 * scale, "residual {}", r.norm());
            let s: Complex64 = d.participation(m).iter().sum();
            assert!((s - c(1.0, 0.0)).norm() < 1e-8);
        }
    }

    #[test]
    fn symmetric_pair_participates_equally() {
        let y = CMatrix::from_row_slice(2, 2, &[c(0.1, -5.0), c(-0.05, 2.0), c(-0.05, 2.0), c(0.1, -5.0)]);
        let d = eigen_decompose(&y).unwrap();
        for m in 0..2 {
            for p in d.participation(m) {
                assert_relative_eq!(p.re, 0.5, epsilon = 1e-12);
                assert!(p.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_participation_is_square_of_normalized_right_vector() {
        let y = CMatrix::from_row_slice(
            3,
            3,
            &[
                c(0.2, -3.0), c(-0.1, 1.0), c(0.0, 0.5),
                c(-0.1, 1.0), c(0.3, -4.0), c(-0.05, 2.0),
                c(0.0, 0.5), c(-0.05, 2.0), c(0.1, -1.0),
            ],
        );
        let d = eigen_decompose(&y).unwrap();
        for m in 0..3 {
            let v = d.right.column(m);
            let tt: Complex64 = v.iter().map(|x| x * x).sum();
            for (k, p) in d.participation(m).iter().enumerate() {
                assert!((p - v[k] * v[k] / tt).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn triangular_input() {
        let y = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 1.0), c(0.0, 0.0), c(3.0, -1.0)]);
        check_decomposition(&y);
    }

    proptest! {
        #[test]
        fn random_matrices_decompose(vals in proptest::collection::vec(-2.0f64..2.0, 32)) {
            let y = CMatrix::from_fn(4, 4, |i, j| c(vals[4 * i + j], vals[16 + 4 * i + j]));
            check_decomposition(&y);
        }
    }
}
