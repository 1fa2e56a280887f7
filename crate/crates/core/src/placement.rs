//! Hierarchical restricted search for filter locations, quality factors and
//! capacities.
//!
//! Level N_F evaluates candidate N_F-tuples, keeps the desirable ones and
//! scans them in ascending index order for the first that meets the voltage
//! distortion limits. A tuple is desirable when its index lies below p^{N_F−1},
//! the d-quantile of the previous level's candidate indices (level 1 uses the
//! d⁰-quantile of its own). Only tuples whose every (N_F − 1)-subset was
//! desirable become candidates at the next level.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fit::{vhd_p95, PercentileEstimate};
use crate::grid::{BusId, CandidateSelection, StudyCase};
use crate::harmonic::build_injection_basis;
use crate::moments::{analyze, expected_sthd, DistortionStats};
use crate::pf::{check_constraints, solve_power_flow, ConstraintReport, PfSolution};
use crate::scenario::{FilterPlacement, PlacementScenario};

/// A 95th-percentile distortion above its voltage-class limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionViolation {
    pub bus: BusId,
    pub column: String,
    pub p95_pct: f64,
    pub limit_pct: f64,
}

pub fn distortion_violations(case: &StudyCase, p95: &PercentileEstimate) -> Vec<DistortionViolation> {
    let labels = p95.column_labels();
    let last = labels.len() - 1;
    let mut out = Vec::new();
    for (i, bus) in case.network.buses.iter().enumerate() {
        let lim = case.voltage_limit(i);
        for (c, label) in labels.iter().enumerate() {
            let pct = 100.0 * p95.p95[i][c];
            let limit = if c == last { lim.thd_pct } else { lim.ihd_pct };
            if pct > limit {
                out.push(DistortionViolation {
                    bus: bus.id,
                    column: label.clone(),
                    p95_pct: pct,
                    limit_pct: limit,
                });
            }
        }
    }
    out
}

/// Full analysis of one scenario.
#[derive(Clone, Debug)]
pub struct ScenarioAnalysis {
    pub scenario: PlacementScenario,
    pub pf: PfSolution,
    pub constraints: ConstraintReport,
    pub stats: DistortionStats,
    pub p95: PercentileEstimate,
    pub violations: Vec<DistortionViolation>,
}

impl ScenarioAnalysis {
    pub fn e_sthd(&self) -> f64 {
        self.stats.e_sthd
    }

    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn analyze_scenario(case: &StudyCase, scenario: &PlacementScenario) -> Result<ScenarioAnalysis> {
    let pf = solve_power_flow(case, scenario)?;
    let constraints = check_constraints(&pf, case);
    let basis = build_injection_basis(case, scenario, &pf)?;
    let stats = analyze(&basis);
    let p95 = vhd_p95(&stats);
    let violations = distortion_violations(case, &p95);
    Ok(ScenarioAnalysis {
        scenario: scenario.clone(),
        pf,
        constraints,
        stats,
        p95,
        violations,
    })
}

/// Base-case index, percentiles and violations; no violations means no filters are needed.
pub fn base_analysis(case: &StudyCase) -> Result<ScenarioAnalysis> {
    analyze_scenario(case, &PlacementScenario::base())
}

/// E[S_THD] and constraint feasibility; `None` when the power flow diverges.
fn evaluate(case: &StudyCase, scenario: &PlacementScenario) -> Result<Option<(f64, bool)>> {
    let pf = match solve_power_flow(case, scenario) {
        Ok(pf) => pf,
        Err(Error::Divergence { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let feasible = check_constraints(&pf, case).is_feasible();
    let basis = build_injection_basis(case, scenario, &pf)?;
    Ok(Some((expected_sthd(&basis), feasible)))
}

pub fn candidate_buses(case: &StudyCase) -> Vec<BusId> {
    let mut out: Vec<BusId> = match &case.config.search.candidates {
        CandidateSelection::BaseKv(kv) => case
            .network
            .buses
            .iter()
            .filter(|b| (b.base_kv - kv).abs() <= 0.5)
            .map(|b| b.id)
            .collect(),
        CandidateSelection::Buses(list) => list.clone(),
    };
    out.sort_unstable();
    out.dedup();
    out
}

/// Quality factor from the grid minimising E[S_THD] for a single filter at
/// maximum capacity. Ties keep the smaller q.
pub fn optimize_q(case: &StudyCase, bus: BusId) -> Result<f64> {
    let q_max = case.config.q_filter_max_mvar;
    let mut grid = case.config.search.q_grid.clone();
    grid.sort_by(|a, b| a.total_cmp(b));
    let mut best: Option<(f64, f64)> = None;
    for q in grid {
        let sc = PlacementScenario::new(vec![FilterPlacement { bus, q, q_mvar: q_max }])?;
        if let Some((e, _)) = evaluate(case, &sc)? {
            if best.is_none_or(|(_, be)| e < be) {
                best = Some((q, e));
            }
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::NoConvergence(format!("power flow fails for every q with a filter at bus {bus}")))
}

/// A filter combination with fitted capacities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedCombo {
    pub buses: Vec<BusId>,
    pub scenario: PlacementScenario,
    pub e_sthd: f64,
}

/// Keeps every filter at the maximum capacity when that satisfies the
/// voltage and current constraints; otherwise picks the feasible assignment
/// from the capacity grid with the lowest E[S_THD]. `None` if nothing is feasible.
pub fn fit_capacity(case: &StudyCase, combo: &[(BusId, f64)]) -> Result<Option<FittedCombo>> {
    let q_max = case.config.q_filter_max_mvar;
    let build = |caps: &[f64]| {
        PlacementScenario::new(
            combo
                .iter()
                .zip(caps)
                .map(|(&(bus, q), &q_mvar)| FilterPlacement { bus, q, q_mvar })
                .collect(),
        )
    };
    let fitted = |scenario: PlacementScenario, e_sthd: f64| FittedCombo {
        buses: scenario.buses(),
        scenario,
        e_sthd,
    };
    let full = build(&vec![q_max; combo.len()])?;
    if let Some((e, true)) = evaluate(case, &full)? {
        return Ok(Some(fitted(full, e)));
    }
    let grid: Vec<f64> = case
        .config
        .search
        .capacity_grid
        .iter()
        .copied()
        .filter(|&c| c > 0.0 && c <= q_max + 1e-9)
        .collect();
    if grid.is_empty() {
        return Ok(None);
    }
    let mut best: Option<FittedCombo> = None;
    let mut digits = vec![0usize; combo.len()];
    loop {
        let caps: Vec<f64> = digits.iter().map(|&d| grid[d]).collect();
        if caps.iter().any(|&c| c < q_max - 1e-9) {
            let sc = build(&caps)?;
            if let Some((e, true)) = evaluate(case, &sc)? {
                if best.as_ref().is_none_or(|b| e < b.e_sthd) {
                    best = Some(fitted(sc, e));
                }
            }
        }
        // Odometer over grid indices, last filter fastest.
        let mut i = digits.len();
        loop {
            if i == 0 {
                return Ok(best);
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < grid.len() {
                break;
            }
            digits[i] = 0;
        }
    }
}

/// Threshold at the `d`-quantile (order statistic ⌈d·n⌉) of `values`;
/// `None` (no pruning) for d ≥ 1.
pub fn quantile_threshold(values: &[f64], d: f64) -> Option<f64> {
    if d >= 1.0 || values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = ((d * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    Some(v[k])
}

/// Members strictly below `threshold` (all of them for `None`), sorted by
/// (index, buses).
pub fn select_desirable(members: &[FittedCombo], threshold: Option<f64>) -> Vec<FittedCombo> {
    let mut b: Vec<FittedCombo> = members
        .iter()
        .filter(|m| threshold.is_none_or(|p| m.e_sthd < p))
        .cloned()
        .collect();
    b.sort_by(|x, y| x.e_sthd.total_cmp(&y.e_sthd).then_with(|| x.buses.cmp(&y.buses)));
    b
}

/// Level-1 candidates are single buses; deeper levels join desirable tuples
/// and keep those whose every one-smaller subset is desirable.
pub fn build_candidates(level: usize, buses: &[BusId], desirable_prev: &[Vec<BusId>]) -> Vec<Vec<BusId>> {
    if level <= 1 {
        let mut out: Vec<Vec<BusId>> = buses.iter().map(|&b| vec![b]).collect();
        out.sort();
        out.dedup();
        return out;
    }
    let prev: BTreeSet<Vec<BusId>> = desirable_prev
        .iter()
        .filter(|s| s.len() == level - 1)
        .map(|s| {
            let mut s = s.clone();
            s.sort_unstable();
            s
        })
        .collect();
    let items: Vec<&Vec<BusId>> = prev.iter().collect();
    let mut out = BTreeSet::new();
    for (i, a) in items.iter().enumerate() {
        for b in &items[i + 1..] {
            // Sorted sets sharing all but the last element.
            if a[..level - 2] != b[..level - 2] {
                continue;
            }
            let mut joined = (*a).clone();
            joined.push(b[level - 2]);
            joined.sort_unstable();
            let all_desirable = (0..joined.len()).all(|skip| {
                let sub: Vec<BusId> = joined.iter().enumerate().filter(|(k, _)| *k != skip).map(|(_, &x)| x).collect();
                prev.contains(&sub)
            });
            if all_desirable {
                out.insert(joined);
            }
        }
    }
    out.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: usize,
    /// Candidate tuples (A).
    pub candidates: Vec<Vec<BusId>>,
    /// Tuples with a feasible capacity fit and their index.
    pub evaluated: Vec<(Vec<BusId>, f64)>,
    /// Desirable tuples (B), ascending by index.
    pub desirable: Vec<Vec<BusId>>,
    /// Threshold p^{N_F−1} applied to this level; `None` means no pruning.
    pub threshold: Option<f64>,
    /// Members of B analysed before the level ended.
    pub scanned: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub levels: Vec<LevelRecord>,
}

impl SearchTrace {
    /// Proper nonempty subsets of `combo` missing from their level's desirable set.
    pub fn apriori_gaps(&self, combo: &[BusId]) -> Vec<Vec<BusId>> {
        let mut gaps = Vec::new();
        let n = combo.len();
        if n < 2 || n > 64 {
            return gaps;
        }
        let mut sorted = combo.to_vec();
        sorted.sort_unstable();
        for mask in 1u64..(1u64 << n) - 1 {
            let sub: Vec<BusId> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| sorted[i]).collect();
            let present = self
                .levels
                .get(sub.len() - 1)
                .is_some_and(|l| l.desirable.iter().any(|d| *d == sub));
            if !present {
                gaps.push(sub);
            }
        }
        gaps
    }
}

/// One row of the case table: the base, each level's best desirable tuple
/// and the final solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub label: String,
    pub level: usize,
    pub filters: Vec<FilterPlacement>,
    pub e_sthd: f64,
    pub satisfies: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementSolution {
    pub satisfied: bool,
    pub no_filters_needed: bool,
    pub scenario: PlacementScenario,
    pub e_sthd: f64,
    pub p95: PercentileEstimate,
    pub violations: Vec<DistortionViolation>,
    pub base_e_sthd: f64,
    pub base_violations: Vec<DistortionViolation>,
    pub q_opt: BTreeMap<BusId, f64>,
    pub cases: Vec<CaseRecord>,
    /// Every scanned tuple in scan order.
    pub scanned: Vec<CaseRecord>,
    pub trace: SearchTrace,
    pub apriori_sound: bool,
}

impl PlacementSolution {
    /// `case,level,filters,e_sthd,satisfies` rows; filters as `bus:q:Q` joined by `+`.
    pub fn cases_csv(&self) -> String {
        let mut out = String::from("case,level,filters,e_sthd,satisfies\n");
        for c in &self.cases {
            let filters = c
                .filters
                .iter()
                .map(|f| format!("{}:{}:{}", f.bus, f.q, f.q_mvar))
                .collect::<Vec<_>>()
                .join("+");
            out.push_str(&format!("{},{},{filters},{:.10e},{}\n", c.label, c.level, c.e_sthd, c.satisfies));
        }
        out
    }
}

fn record(label: String, level: usize, a: &ScenarioAnalysis) -> CaseRecord {
    CaseRecord {
        label,
        level,
        filters: a.scenario.filters.clone(),
        e_sthd: a.e_sthd(),
        satisfies: a.passes(),
    }
}

pub fn run_search(case: &StudyCase, exec: Execution) -> Result<PlacementSolution> {
    let cfg = &case.config.search;
    let base = base_analysis(case)?;
    let base_case = record("base".into(), 0, &base);
    let finish = |a: &ScenarioAnalysis, satisfied: bool, q_opt, cases, scanned, trace: SearchTrace| {
        let apriori_sound = trace.apriori_gaps(&a.scenario.buses()).is_empty();
        if !apriori_sound {
            log::error!("returned tuple {:?} has subsets outside the desirable sets", a.scenario.buses());
        }
        PlacementSolution {
            satisfied,
            no_filters_needed: a.scenario.is_base() && satisfied,
            scenario: a.scenario.clone(),
            e_sthd: a.e_sthd(),
            p95: a.p95.clone(),
            violations: a.violations.clone(),
            base_e_sthd: base.e_sthd(),
            base_violations: base.violations.clone(),
            q_opt,
            cases,
            scanned,
            trace,
            apriori_sound,
        }
    };
    if base.passes() {
        log::info!("base case meets all limits; no filters needed");
        return Ok(finish(&base, true, BTreeMap::new(), vec![base_case], Vec::new(), SearchTrace::default()));
    }
    let buses = candidate_buses(case);
    if buses.is_empty() {
        return Err(Error::InvalidArgument("candidate bus set is empty".into()));
    }
    for &b in &buses {
        case.network.bus_index(b)?;
    }

    let q_results = exec.map(&buses, |&b| optimize_q(case, b));
    let mut q_opt = BTreeMap::new();
    for (&b, r) in buses.iter().zip(q_results) {
        match r {
            Ok(q) => {
                q_opt.insert(b, q);
            }
            Err(Error::NoConvergence(msg)) => log::warn!("dropping candidate {b}: {msg}"),
            Err(e) => return Err(e),
        }
    }
    let usable: Vec<BusId> = q_opt.keys().copied().collect();

    let mut trace = SearchTrace::default();
    let mut cases = vec![base_case];
    let mut scanned = Vec::new();
    let mut best: Option<ScenarioAnalysis> = None;
    let mut desirable_prev: Vec<Vec<BusId>> = Vec::new();
    let mut p_prev: Option<f64> = None;
    for level in 1..=cfg.max_filters.max(1) {
        let candidates = build_candidates(level, &usable, &desirable_prev);
        if candidates.is_empty() {
            log::info!("no candidate tuples at level {level}; search exhausted");
            break;
        }
        let fits = exec.map(&candidates, |c| {
            let combo: Vec<(BusId, f64)> = c.iter().map(|b| (*b, q_opt[b])).collect();
            fit_capacity(case, &combo)
        });
        let mut members = Vec::new();
        for f in fits {
            if let Some(m) = f? {
                members.push(m);
            }
        }
        let values: Vec<f64> = members.iter().map(|m| m.e_sthd).collect();
        if level == 1 {
            p_prev = quantile_threshold(&values, cfg.d_at(0));
        }
        let threshold = p_prev;
        let desirable = select_desirable(&members, threshold);
        p_prev = quantile_threshold(&values, cfg.d_at(level));
        log::info!(
            "level {level}: {} candidates, {} fitted, {} desirable",
            candidates.len(),
            members.len(),
            desirable.len()
        );
        trace.levels.push(LevelRecord {
            level,
            candidates,
            evaluated: members.iter().map(|m| (m.buses.clone(), m.e_sthd)).collect(),
            desirable: desirable.iter().map(|m| m.buses.clone()).collect(),
            threshold,
            scanned: 0,
        });

        for (rank, member) in desirable.iter().enumerate() {
            let a = analyze_scenario(case, &member.scenario)?;
            let rec = record(format!("case {}", cases.len()), level, &a);
            scanned.push(rec.clone());
            trace.levels.last_mut().expect("level pushed").scanned = rank + 1;
            if rank == 0 {
                cases.push(rec.clone());
            }
            if a.passes() {
                if rank != 0 {
                    cases.push(rec);
                }
                return Ok(finish(&a, true, q_opt, cases, scanned, trace));
            }
            if best.as_ref().is_none_or(|b| a.e_sthd() < b.e_sthd()) {
                best = Some(a);
            }
        }
        desirable_prev = desirable.into_iter().map(|m| m.buses).collect();
    }
    log::warn!("no tuple meets the limits within {} filters", cfg.max_filters);
    let out = match &best {
        Some(a) => finish(a, false, q_opt, cases, scanned, trace),
        None => finish(&base, false, q_opt, cases, scanned, trace),
    };
    Ok(out)
}
