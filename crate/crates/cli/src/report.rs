//! Per-bus distortion tables and before/after comparisons.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use anyhow::{bail, Result};
use harmfilt_core::grid::{BusId, StudyCase};
use harmfilt_core::placement::ScenarioAnalysis;
use serde::{Deserialize, Serialize};

/// One (bus, column) cell of an analysis: moments of V² and the p95 of V in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub bus: BusId,
    pub base_kv: f64,
    pub column: String,
    pub mean_v2: f64,
    pub var_v2: f64,
    pub p95_pct: f64,
    pub limit_pct: f64,
    pub family: String,
}

pub fn stats_rows(case: &StudyCase, a: &ScenarioAnalysis) -> Vec<StatsRow> {
    let labels = a.p95.column_labels();
    let cols = a.stats.columns();
    let last = labels.len() - 1;
    let mut out = Vec::with_capacity(case.len() * labels.len());
    for (i, bus) in case.network.buses.iter().enumerate() {
        let lim = case.voltage_limit(i);
        for (c, label) in labels.iter().enumerate() {
            out.push(StatsRow {
                bus: bus.id,
                base_kv: bus.base_kv,
                column: label.clone(),
                mean_v2: cols[c].0[i],
                var_v2: cols[c].1[i],
                p95_pct: 100.0 * a.p95.p95[i][c],
                limit_pct: if c == last { lim.thd_pct } else { lim.ihd_pct },
                family: a.p95.family[i][c]
                    .map(|f| format!("{f:?}").to_lowercase())
                    .unwrap_or_else(|| "point".into()),
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub bus: BusId,
    pub column: String,
    pub base_p95_pct: f64,
    pub treated_p95_pct: f64,
    pub delta_pct: f64,
    pub limit_pct: f64,
    pub base_pass: bool,
    pub treated_pass: bool,
}

/// Pairs rows by (bus, column); both files must cover the same cells.
pub fn compare(base: &[StatsRow], treated: &[StatsRow]) -> Result<Vec<ComparisonRow>> {
    let key = |r: &StatsRow| (r.bus, r.column.clone());
    let b: BTreeMap<_, _> = base.iter().map(|r| (key(r), r)).collect();
    let t: BTreeMap<_, _> = treated.iter().map(|r| (key(r), r)).collect();
    if b.len() != base.len() || t.len() != treated.len() {
        bail!("duplicate (bus, column) rows in stats input");
    }
    if !b.keys().eq(t.keys()) {
        let missing: Vec<_> = b.keys().filter(|k| !t.contains_key(*k)).chain(t.keys().filter(|k| !b.contains_key(*k))).take(5).collect();
        bail!("base and treated stats cover different buses or columns, e.g. {missing:?}");
    }
    // Keep the base file's row order.
    Ok(base
        .iter()
        .map(|r| {
            let tr = t[&key(r)];
            ComparisonRow {
                bus: r.bus,
                column: r.column.clone(),
                base_p95_pct: r.p95_pct,
                treated_p95_pct: tr.p95_pct,
                delta_pct: tr.p95_pct - r.p95_pct,
                limit_pct: tr.limit_pct,
                base_pass: r.p95_pct <= r.limit_pct,
                treated_pass: tr.p95_pct <= tr.limit_pct,
            }
        })
        .collect())
}

/// A row of the case table written by `place`.
#[derive(Clone, Debug, Deserialize)]
pub struct CaseRow {
    pub case: String,
    pub level: usize,
    pub filters: String,
    pub e_sthd: f64,
    pub satisfies: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesRow {
    pub case: String,
    pub n_f: usize,
    pub filters: String,
    pub e_sthd: f64,
    pub satisfies: bool,
}

pub fn series(cases: &[CaseRow]) -> Vec<SeriesRow> {
    cases
        .iter()
        .map(|c| SeriesRow {
            case: c.case.clone(),
            n_f: c.level,
            filters: c.filters.clone(),
            e_sthd: c.e_sthd,
            satisfies: c.satisfies,
        })
        .collect()
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(r: impl Read) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_rows<T: Serialize>(w: impl Write, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Plain-text table of the rows that fail in either scenario.
pub fn render_flagged(rows: &[ComparisonRow]) -> String {
    let mut out = format!(
        "{:>6} {:>6} {:>10} {:>10} {:>8} {:>7}\n",
        "bus", "column", "base %", "treated %", "limit %", "status"
    );
    for r in rows.iter().filter(|r| !r.base_pass || !r.treated_pass) {
        let status = match (r.base_pass, r.treated_pass) {
            (false, true) => "fixed",
            (false, false) => "FAIL",
            _ => "NEW",
        };
        out.push_str(&format!(
            "{:>6} {:>6} {:>10.3} {:>10.3} {:>8.2} {:>7}\n",
            r.bus, r.column, r.base_p95_pct, r.treated_p95_pct, r.limit_pct, status
        ));
    }
    let failing = rows.iter().filter(|r| !r.treated_pass).count();
    out.push_str(&format!("{} cells, {} over limit after treatment\n", rows.len(), failing));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(bus: BusId, column: &str, p95: f64) -> StatsRow {
        StatsRow {
            bus,
            base_kv: 138.0,
            column: column.into(),
            mean_v2: 1e-5,
            var_v2: 1e-10,
            p95_pct: p95,
            limit_pct: 1.5,
            family: "gamma".into(),
        }
    }

    #[test]
    fn identical_inputs_give_zero_deltas() {
        let rows = vec![row(1, "ihd5", 1.2), row(1, "thd", 1.4), row(2, "ihd5", 0.3)];
        let cmp = compare(&rows, &rows).unwrap();
        assert!(cmp.iter().all(|r| r.delta_pct == 0.0));
    }

    #[test]
    fn over_limit_cell_is_flagged() {
        let base = vec![row(1, "ihd5", 1.2), row(2, "ihd5", 1.7)];
        let treated = vec![row(1, "ihd5", 1.6), row(2, "ihd5", 1.0)];
        let cmp = compare(&base, &treated).unwrap();
        assert!(!cmp[0].treated_pass && cmp[0].base_pass);
        assert!(cmp[1].treated_pass && !cmp[1].base_pass);
        let text = render_flagged(&cmp);
        assert!(text.contains("NEW") && text.contains("fixed"));
    }

    #[test]
    fn mismatched_buses_are_rejected() {
        let base = vec![row(1, "ihd5", 1.0)];
        let treated = vec![row(2, "ihd5", 1.0)];
        assert!(compare(&base, &treated).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(1, "ihd5", 1.25), row(7, "thd", 0.5)];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("bus,base_kv,column,mean_v2,var_v2,p95_pct,limit_pct,family\n"));
        let back: Vec<StatsRow> = read_rows(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }
}
