//! Monte Carlo sampling of the stochastic injections: draws (α, φ) per
//! sample, evaluates the phasor sums through the injection basis and keeps
//! streaming moments, per-sample system-wide indices and optional per-bus
//! sample arrays.
//!
//! Every sample owns its random stream (ChaCha8 keyed by seed, stream = sample
//! index), samples are processed in fixed-size chunks and chunk statistics are
//! merged in chunk order, so results do not depend on the worker count.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{AlphaDistribution, BusId, StudyCase};
use crate::harmonic::{build_injection_basis, InjectionBasis};
use crate::pf::solve_power_flow;
use crate::scenario::PlacementScenario;

pub const DEFAULT_SAMPLES: usize = 1_000_000;
const CHUNK: usize = 8192;
const CHUNKS_PER_BATCH: usize = 16;
/// Upper bound on retained per-bus sample values (2 GB of f64).
const MAX_TRACKED_VALUES: usize = 250_000_000;

/// Which buses keep their full per-sample distortion arrays.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tracking {
    #[default]
    All,
    None,
    Buses(Vec<BusId>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McsOptions {
    pub samples: usize,
    pub seed: u64,
    pub tracking: Tracking,
    pub execution: Execution,
}

impl McsOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        McsOptions {
            samples,
            seed,
            tracking: Tracking::All,
            execution: Execution::default(),
        }
    }

    pub fn tracking(mut self, tracking: Tracking) -> Self {
        self.tracking = tracking;
        self
    }

    pub fn execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

fn sample_rng(seed: u64, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    rng
}

/// Visits every draw of one sample in the fixed order: harmonic slot, then
/// injector, with the magnitude uniform taken before the phase uniform.
fn draw(spectra: &[Vec<AlphaDistribution>], seed: u64, sample: u64, mut visit: impl FnMut(usize, usize, f64, f64)) {
    let mut rng = sample_rng(seed, sample);
    for (k, row) in spectra.iter().enumerate() {
        for (j, d) in row.iter().enumerate() {
            let ua: f64 = rng.random();
            let up: f64 = rng.random();
            visit(k, j, d.quantile(ua), TAU * up);
        }
    }
}

fn spectra(basis: &InjectionBasis) -> Vec<Vec<AlphaDistribution>> {
    (0..basis.harmonics.len())
        .map(|k| (0..basis.injectors.len()).map(|j| *basis.alpha(k, j)).collect())
        .collect()
}

/// Harmonic magnitudes and phases `(α, φ)` of one sample, `[slot][injector]`.
pub fn sample_injections(basis: &InjectionBasis, seed: u64, sample: u64) -> Vec<Vec<(f64, f64)>> {
    let sp = spectra(basis);
    let mut out: Vec<Vec<(f64, f64)>> = sp.iter().map(|r| vec![(0.0, 0.0); r.len()]).collect();
    draw(&sp, seed, sample, |k, j, a, p| out[k][j] = (a, p));
    out
}

/// Empirical results of one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct McsRun {
    pub scenario_id: String,
    pub seed: u64,
    pub samples: usize,
    pub harmonics: Vec<u32>,
    pub buses: Vec<BusId>,
    pub injector_buses: Vec<BusId>,
    /// Sample mean per `[column][bus]`; columns are V²_IHD per order, then V²_THD.
    pub mean: Vec<Vec<f64>>,
    /// Unbiased sample variance, same layout as `mean`.
    pub variance: Vec<Vec<f64>>,
    pub tracked: Vec<BusId>,
    /// `[tracked bus][column][sample]`.
    pub tracked_samples: Vec<Vec<Vec<f64>>>,
    /// `[slot][sample]`.
    pub s_ihd: Vec<Vec<f64>>,
    pub s_thd: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McsSummary {
    pub scenario_id: String,
    pub seed: u64,
    pub samples: usize,
    pub harmonics: Vec<u32>,
    pub e_sihd: Vec<f64>,
    pub var_sihd: Vec<f64>,
    pub e_sthd: f64,
    pub var_sthd: f64,
    pub p95_sthd: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, if xs.len() > 1 { ss / (n - 1.0) } else { 0.0 })
}

/// Order statistic at ⌈p·n⌉ (1-based).
pub fn empirical_quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    let k = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    let (_, x, _) = v.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *x
}

impl McsRun {
    pub fn columns(&self) -> usize {
        self.harmonics.len() + 1
    }

    pub fn column_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.harmonics.iter().map(|h| format!("ihd{h}")).collect();
        out.push("thd".into());
        out
    }

    /// Per-sample values of `column` at a tracked bus.
    pub fn tracked_column(&self, bus: BusId, column: usize) -> Option<&[f64]> {
        let t = self.tracked.iter().position(|&b| b == bus)?;
        self.tracked_samples[t].get(column).map(|v| v.as_slice())
    }

    pub fn percentile(&self, bus: BusId, column: usize, p: f64) -> Option<f64> {
        self.tracked_column(bus, column).map(|xs| empirical_quantile(xs, p))
    }

    pub fn summary(&self) -> McsSummary {
        let (e_sihd, var_sihd) = self.s_ihd.iter().map(|s| mean_var(s)).unzip();
        let (e_sthd, var_sthd) = mean_var(&self.s_thd);
        McsSummary {
            scenario_id: self.scenario_id.clone(),
            seed: self.seed,
            samples: self.samples,
            harmonics: self.harmonics.clone(),
            e_sihd,
            var_sihd,
            e_sthd,
            var_sthd,
            p95_sthd: empirical_quantile(&self.s_thd, 0.95),
        }
    }

    /// `bus,column,mean,variance,p95` rows; p95 is empty for untracked buses.
    pub fn stats_csv(&self) -> String {
        let labels = self.column_labels();
        let mut out = String::from("bus,column,mean,variance,p95\n");
        for (i, &bus) in self.buses.iter().enumerate() {
            for (c, label) in labels.iter().enumerate() {
                let p95 = self
                    .percentile(bus, c, 0.95)
                    .map(|x| format!("{x:.10e}"))
                    .unwrap_or_default();
                out.push_str(&format!(
                    "{bus},{label},{:.10e},{:.10e},{p95}\n",
                    self.mean[c][i], self.variance[c][i]
                ));
            }
        }
        out
    }

    /// Names of the per-sample columns written by [`McsRun::write_dump`].
    pub fn dump_columns(&self) -> Vec<String> {
        let labels = self.column_labels();
        let mut out: Vec<String> = self.harmonics.iter().map(|h| format!("s_ihd{h}")).collect();
        out.push("s_thd".into());
        for bus in &self.tracked {
            out.extend(labels.iter().map(|l| format!("{bus}:{l}")));
        }
        out
    }

    /// One row of little-endian f64 per sample, laid out as [`McsRun::dump_columns`].
    pub fn write_dump(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut row = Vec::with_capacity(8 * self.dump_columns().len());
        for s in 0..self.samples {
            row.clear();
            for k in &self.s_ihd {
                row.extend_from_slice(&k[s].to_le_bytes());
            }
            row.extend_from_slice(&self.s_thd[s].to_le_bytes());
            for cols in &self.tracked_samples {
                for c in cols {
                    row.extend_from_slice(&c[s].to_le_bytes());
                }
            }
            w.write_all(&row)?;
        }
        Ok(())
    }
}

/// Count, mean and sum of squared deviations per `[column][bus]`.
#[derive(Clone, Debug)]
struct Moments {
    n: f64,
    mean: Vec<Vec<f64>>,
    m2: Vec<Vec<f64>>,
}

impl Moments {
    fn empty(cols: usize, buses: usize) -> Self {
        Moments {
            n: 0.0,
            mean: vec![vec![0.0; buses]; cols],
            m2: vec![vec![0.0; buses]; cols],
        }
    }

    fn merge(&mut self, other: &Moments) {
        let n = self.n + other.n;
        if other.n == 0.0 {
            return;
        }
        for c in 0..self.mean.len() {
            for b in 0..self.mean[c].len() {
                let d = other.mean[c][b] - self.mean[c][b];
                self.mean[c][b] += d * other.n / n;
                self.m2[c][b] += other.m2[c][b] + d * d * self.n * other.n / n;
            }
        }
        self.n = n;
    }
}

struct ChunkResult {
    moments: Moments,
    tracked: Vec<Vec<Vec<f64>>>,
    s_ihd: Vec<Vec<f64>>,
    s_thd: Vec<f64>,
}

/// Real and imaginary parts of U ∘ e^{jθ} per slot.
struct SplitBasis {
    re: Vec<DMatrix<f64>>,
    im: Vec<DMatrix<f64>>,
}

impl SplitBasis {
    fn new(basis: &InjectionBasis) -> Self {
        let (re, im) = (0..basis.harmonics.len())
            .map(|k| {
                let c = basis.complex(k);
                (c.map(|z| z.re), c.map(|z| z.im))
            })
            .unzip();
        SplitBasis { re, im }
    }
}

fn simulate_chunk(
    bases: &[SplitBasis],
    spectra: &[Vec<AlphaDistribution>],
    tracked: &[usize],
    n_buses: usize,
    seed: u64,
    start: usize,
    len: usize,
) -> Vec<ChunkResult> {
    let slots = spectra.len();
    let j = spectra.first().map_or(0, |r| r.len());
    let mut pr: Vec<DMatrix<f64>> = vec![DMatrix::zeros(j, len); slots];
    let mut pi: Vec<DMatrix<f64>> = vec![DMatrix::zeros(j, len); slots];
    for s in 0..len {
        draw(spectra, seed, (start + s) as u64, |k, jj, a, p| {
            let (sin, cos) = p.sin_cos();
            pr[k][(jj, s)] = a * cos;
            pi[k][(jj, s)] = a * sin;
        });
    }
    let nb = n_buses as f64;
    bases
        .iter()
        .map(|sb| {
            let mut v2: Vec<DMatrix<f64>> = (0..slots)
                .map(|k| {
                    let re = &sb.re[k] * &pr[k] - &sb.im[k] * &pi[k];
                    let im = &sb.re[k] * &pi[k] + &sb.im[k] * &pr[k];
                    re.zip_map(&im, |a, b| a * a + b * b)
                })
                .collect();
            let thd = v2.iter().fold(DMatrix::zeros(n_buses, len), |acc, m| acc + m);
            v2.push(thd);
            let mut moments = Moments::empty(slots + 1, n_buses);
            moments.n = len as f64;
            for (c, m) in v2.iter().enumerate() {
                for b in 0..n_buses {
                    let row = m.row(b);
                    let mean = row.iter().sum::<f64>() / len as f64;
                    moments.mean[c][b] = mean;
                    moments.m2[c][b] = row.iter().map(|x| (x - mean).powi(2)).sum();
                }
            }
            let s_ihd: Vec<Vec<f64>> = v2[..slots]
                .iter()
                .map(|m| m.column_iter().map(|col| col.sum() / nb).collect())
                .collect();
            let s_thd = (0..len).map(|s| s_ihd.iter().map(|k| k[s]).sum()).collect();
            let tracked = tracked
                .iter()
                .map(|&b| v2.iter().map(|m| m.row(b).iter().copied().collect()).collect())
                .collect();
            ChunkResult {
                moments,
                tracked,
                s_ihd,
                s_thd,
            }
        })
        .collect()
}

fn check_paired(bases: &[InjectionBasis]) -> Result<()> {
    let first = &bases[0];
    for b in &bases[1..] {
        let same_injectors = b.injectors.len() == first.injectors.len()
            && b.injectors.iter().zip(&first.injectors).all(|(x, y)| x.bus == y.bus && x.spectrum == y.spectrum);
        if b.harmonics != first.harmonics || b.n_buses != first.n_buses || !same_injectors {
            return Err(Error::Unpaired("scenarios differ in buses, harmonics or injectors".into()));
        }
    }
    Ok(())
}

/// Runs all `bases` on the same draws. `ids` name the scenarios and `buses`
/// gives the bus ids in basis row order.
pub fn simulate(bases: &[InjectionBasis], ids: &[String], buses: &[BusId], opts: &McsOptions) -> Result<Vec<McsRun>> {
    if opts.samples == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if bases.is_empty() || ids.len() != bases.len() || buses.len() != bases[0].n_buses {
        return Err(Error::InvalidArgument("scenario ids and bus ids must match the bases".into()));
    }
    check_paired(bases)?;
    let tracked: Vec<usize> = match &opts.tracking {
        Tracking::All => (0..buses.len()).collect(),
        Tracking::None => Vec::new(),
        Tracking::Buses(list) => list
            .iter()
            .map(|b| buses.iter().position(|x| x == b).ok_or(Error::UnknownBus(*b)))
            .collect::<Result<_>>()?,
    };
    let first = &bases[0];
    let slots = first.harmonics.len();
    let cols = slots + 1;
    let retained = tracked.len() * cols * opts.samples * bases.len();
    if retained > MAX_TRACKED_VALUES {
        return Err(Error::InvalidArgument(format!(
            "tracking {} buses over {} samples would keep {retained} values; track fewer buses",
            tracked.len(),
            opts.samples
        )));
    }
    let sp = spectra(first);
    let split: Vec<SplitBasis> = bases.iter().map(SplitBasis::new).collect();
    let n = first.n_buses;

    let mut runs: Vec<McsRun> = bases
        .iter()
        .zip(ids)
        .map(|(b, id)| McsRun {
            scenario_id: id.clone(),
            seed: opts.seed,
            samples: opts.samples,
            harmonics: b.harmonics.clone(),
            buses: buses.to_vec(),
            injector_buses: b.injectors.iter().map(|i| i.bus).collect(),
            mean: Vec::new(),
            variance: Vec::new(),
            tracked: tracked.iter().map(|&i| buses[i]).collect(),
            tracked_samples: vec![vec![Vec::with_capacity(opts.samples); cols]; tracked.len()],
            s_ihd: vec![Vec::with_capacity(opts.samples); slots],
            s_thd: Vec::with_capacity(opts.samples),
        })
        .collect();
    let mut moments = vec![Moments::empty(cols, n); bases.len()];

    let n_chunks = opts.samples.div_ceil(CHUNK);
    for batch in (0..n_chunks).step_by(CHUNKS_PER_BATCH) {
        let end = (batch + CHUNKS_PER_BATCH).min(n_chunks);
        let results = opts.execution.map_range(batch..end, |c| {
            let start = c * CHUNK;
            let len = CHUNK.min(opts.samples - start);
            simulate_chunk(&split, &sp, &tracked, n, opts.seed, start, len)
        });
        for chunk in results {
            for (r, res) in chunk.into_iter().enumerate() {
                moments[r].merge(&res.moments);
                let run = &mut runs[r];
                for (k, s) in res.s_ihd.into_iter().enumerate() {
                    run.s_ihd[k].extend(s);
                }
                run.s_thd.extend(res.s_thd);
                for (t, cols) in res.tracked.into_iter().enumerate() {
                    for (c, v) in cols.into_iter().enumerate() {
                        run.tracked_samples[t][c].extend(v);
                    }
                }
            }
        }
    }
    let denom = (opts.samples as f64 - 1.0).max(1.0);
    for (run, m) in runs.iter_mut().zip(moments) {
        run.variance = m.m2.iter().map(|c| c.iter().map(|x| x / denom).collect()).collect();
        run.mean = m.mean;
    }
    Ok(runs)
}

/// Solves each scenario and samples them all on common random numbers.
pub fn run_mcs_paired(case: &StudyCase, scenarios: &[PlacementScenario], opts: &McsOptions) -> Result<Vec<McsRun>> {
    let bases = scenarios
        .iter()
        .map(|sc| {
            let pf = solve_power_flow(case, sc)?;
            build_injection_basis(case, sc, &pf)
        })
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = scenarios.iter().map(|s| s.id.clone()).collect();
    simulate(&bases, &ids, &case.network.bus_ids(), opts)
}

pub fn run_mcs(case: &StudyCase, scenario: &PlacementScenario, opts: &McsOptions) -> Result<McsRun> {
    Ok(run_mcs_paired(case, std::slice::from_ref(scenario), opts)?.remove(0))
}

/// Empirical distribution of the per-sample ratio treated / base of one index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub label: String,
    /// P[ratio > 1].
    pub risk: f64,
    /// Ascending.
    #[serde(skip)]
    pub ratios: Vec<f64>,
}

impl RiskCurve {
    /// Empirical CDF at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.ratios.partition_point(|&r| r <= x) as f64 / self.ratios.len() as f64
    }

    /// `m` evenly spaced CDF levels with their ratio values.
    pub fn points(&self, m: usize) -> Vec<(f64, f64)> {
        let n = self.ratios.len();
        (1..=m)
            .map(|i| {
                let p = i as f64 / m as f64;
                let k = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
                (self.ratios[k], p)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub base_id: String,
    pub treated_id: String,
    /// One curve per harmonic order, then the total.
    pub curves: Vec<RiskCurve>,
}

impl RiskReport {
    pub fn total(&self) -> &RiskCurve {
        self.curves.last().expect("total curve")
    }

    /// `index,ratio,cdf` rows at `m` levels per curve.
    pub fn to_csv(&self, m: usize) -> String {
        let mut out = String::from("index,ratio,cdf\n");
        for c in &self.curves {
            for (r, p) in c.points(m) {
                out.push_str(&format!("{},{r:.10e},{p:.6}\n", c.label));
            }
        }
        out
    }
}

fn ratio(treated: f64, base: f64) -> f64 {
    if base == 0.0 {
        if treated == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        treated / base
    }
}

fn curve(label: String, base: &[f64], treated: &[f64]) -> RiskCurve {
    let mut ratios: Vec<f64> = treated.iter().zip(base).map(|(&t, &b)| ratio(t, b)).collect();
    ratios.sort_by(|a, b| a.total_cmp(b));
    let above = ratios.len() - ratios.partition_point(|&r| r <= 1.0);
    RiskCurve {
        label,
        risk: above as f64 / ratios.len() as f64,
        ratios,
    }
}

/// Probability that the treated scenario raises each system-wide index above
/// the base, from runs on common random numbers.
pub fn risk_cdf(base: &McsRun, treated: &McsRun) -> Result<RiskReport> {
    if base.seed != treated.seed || base.samples != treated.samples {
        return Err(Error::Unpaired(format!(
            "seed/samples {}/{} vs {}/{}",
            base.seed, base.samples, treated.seed, treated.samples
        )));
    }
    if base.harmonics != treated.harmonics || base.injector_buses != treated.injector_buses {
        return Err(Error::Unpaired("runs differ in harmonics or injectors".into()));
    }
    let mut curves: Vec<RiskCurve> = base
        .harmonics
        .iter()
        .enumerate()
        .map(|(k, h)| curve(format!("s_ihd{h}"), &base.s_ihd[k], &treated.s_ihd[k]))
        .collect();
    curves.push(curve("s_thd".into(), &base.s_thd, &treated.s_thd));
    Ok(RiskReport {
        base_id: base.scenario_id.clone(),
        treated_id: treated.scenario_id.clone(),
        curves,
    })
}
