use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use harmfilt_core::filter::CTypeFilter;
use harmfilt_core::fit::{ef, log_likelihood, mlf, Family, FitParams};
use harmfilt_core::grid::{attach_harmonic_config, parse_cdf, BusId, CandidateSelection, StudyCase, StudyConfig};
use harmfilt_core::harmonic::{build_impedance_set, build_injection_basis};
use harmfilt_core::mcs::{risk_cdf, run_mcs, run_mcs_paired, McsOptions, McsRun, Tracking};
use harmfilt_core::modal::{sweep_modes, ModalOptions};
use harmfilt_core::moments::analyze as moment_stats;
use harmfilt_core::placement::{analyze_scenario, run_search, DistortionViolation};
use harmfilt_core::scenario::PlacementScenario;
use harmfilt_core::Execution;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::report::{self, CaseRow, StatsRow};
use crate::StudyArgs;

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    write_text(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    report::write_rows(BufWriter::new(file), rows)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<StudyConfig> {
    match path {
        Some(p) => StudyConfig::from_path(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(StudyConfig::default()),
    }
}

fn load_case(args: &StudyArgs, config: StudyConfig, manifest: &mut RunManifest) -> Result<StudyCase> {
    manifest.stage("load");
    manifest.hash_input(&args.case)?;
    if let Some(c) = &args.config {
        manifest.hash_input(c)?;
    }
    manifest.hash_config(&config)?;
    let text = std::fs::read_to_string(&args.case).with_context(|| format!("reading {}", args.case.display()))?;
    let net = parse_cdf(&text).with_context(|| format!("parsing {}", args.case.display()))?;
    log::info!("{}: {} buses, {} branches", args.case.display(), net.buses.len(), net.branches.len());
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    Ok(attach_harmonic_config(net, config)?)
}

/// Accepts a scenario object, a `place` solution (its `scenario` field) or a bare filter list.
pub fn load_scenario(path: &Path, manifest: &mut RunManifest) -> Result<PlacementScenario> {
    manifest.hash_input(path)?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let inner = match &value {
        serde_json::Value::Object(map) if map.contains_key("scenario") => map["scenario"].clone(),
        serde_json::Value::Array(_) => serde_json::json!({ "filters": value }),
        _ => value.clone(),
    };
    let parsed: PlacementScenario =
        serde_json::from_value(inner).with_context(|| format!("{} is not a scenario", path.display()))?;
    let scenario = PlacementScenario::new(parsed.filters)?;
    Ok(if parsed.id.is_empty() { scenario } else { scenario.with_id(parsed.id) })
}

fn scenario_or_base(path: Option<&Path>, manifest: &mut RunManifest) -> Result<PlacementScenario> {
    match path {
        Some(p) => load_scenario(p, manifest),
        None => Ok(PlacementScenario::base()),
    }
}

#[derive(Serialize)]
struct AnalysisSummary<'a> {
    scenario: &'a PlacementScenario,
    e_sthd: f64,
    var_sthd: f64,
    e_sihd: &'a [f64],
    var_sihd: &'a [f64],
    harmonics: &'a [u32],
    power_flow_iterations: usize,
    power_flow_mismatch: f64,
    constraints_feasible: bool,
    constraints: &'a harmfilt_core::pf::ConstraintReport,
    passes: bool,
    violations: &'a [DistortionViolation],
}

pub fn analyze(args: &StudyArgs, scenario: Option<&Path>, dump: bool, threads: Option<usize>) -> Result<()> {
    let mut manifest = RunManifest::new("analyze");
    manifest.threads = threads;
    let config = load_config(args.config.as_deref())?;
    let scenario = scenario_or_base(scenario, &mut manifest)?;
    let case = load_case(args, config, &mut manifest)?;
    manifest.stage("analysis");
    let a = analyze_scenario(&case, &scenario)?;
    manifest.stage("write");
    write_csv(&args.out, "stats.csv", &report::stats_rows(&case, &a))?;
    write_json(
        &args.out,
        "summary.json",
        &AnalysisSummary {
            scenario: &a.scenario,
            e_sthd: a.stats.e_sthd,
            var_sthd: a.stats.var_sthd,
            e_sihd: &a.stats.e_sihd,
            var_sihd: &a.stats.var_sihd,
            harmonics: &a.stats.harmonics,
            power_flow_iterations: a.pf.iterations,
            power_flow_mismatch: a.pf.max_mismatch,
            constraints_feasible: a.constraints.is_feasible(),
            constraints: &a.constraints,
            passes: a.passes(),
            violations: &a.violations,
        },
    )?;
    if dump {
        write_text(&args.out, "pf.csv", &a.pf.to_csv(&case))?;
        write_text(&args.out, "z_diag.csv", &build_impedance_set(&case, &scenario, &a.pf)?.diagonal_csv(&case))?;
        write_text(&args.out, "injection.csv", &build_injection_basis(&case, &scenario, &a.pf)?.to_csv(&case))?;
    }
    log::info!(
        "E[S_THD] = {:.4e}, {} distortion violations, constraints {}",
        a.e_sthd(),
        a.violations.len(),
        if a.constraints.is_feasible() { "met" } else { "violated" }
    );
    manifest.write(&args.out)
}

pub struct SearchOverrides {
    pub d_quantile: Option<Vec<f64>>,
    pub q_grid: Option<Vec<f64>>,
    pub capacity_grid: Option<Vec<f64>>,
    pub max_filters: Option<usize>,
    pub candidates: Option<String>,
}

fn parse_candidates(text: &str) -> Result<CandidateSelection> {
    if let Some(kv) = text.strip_prefix("kv:") {
        let kv: f64 = kv.trim().parse().with_context(|| format!("bad voltage in --candidates {text:?}"))?;
        return Ok(CandidateSelection::BaseKv(kv));
    }
    let buses = text
        .split(',')
        .map(|s| s.trim().parse::<BusId>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("bad bus list in --candidates {text:?}"))?;
    Ok(CandidateSelection::Buses(buses))
}

pub fn place(args: &StudyArgs, o: SearchOverrides, threads: Option<usize>) -> Result<()> {
    let mut manifest = RunManifest::new("place");
    manifest.threads = threads;
    let mut config = load_config(args.config.as_deref())?;
    let s = &mut config.search;
    if let Some(v) = o.d_quantile {
        s.d_quantiles = v;
    }
    if let Some(v) = o.q_grid {
        s.q_grid = v;
    }
    if let Some(v) = o.capacity_grid {
        s.capacity_grid = v;
    }
    if let Some(v) = o.max_filters {
        s.max_filters = v;
    }
    if let Some(c) = o.candidates {
        s.candidates = parse_candidates(&c)?;
    }
    config.validate()?;
    let case = load_case(args, config, &mut manifest)?;
    manifest.stage("search");
    let sol = run_search(&case, Execution::Parallel)?;
    manifest.stage("write");
    write_json(&args.out, "solution.json", &sol)?;
    write_text(&args.out, "cases.csv", &sol.cases_csv())?;
    if sol.satisfied {
        log::info!("solution {:?}, E[S_THD] = {:.4e}", sol.scenario.buses(), sol.e_sthd);
    } else {
        log::warn!(
            "no placement meets the limits; best effort {:?} leaves {} violations",
            sol.scenario.buses(),
            sol.violations.len()
        );
    }
    manifest.write(&args.out)
}

pub struct McsArgs {
    pub scenario: Option<PathBuf>,
    pub samples: usize,
    pub seed: u64,
    pub track: String,
    pub compare_base: bool,
    pub fit: bool,
    pub dump: Option<PathBuf>,
}

fn parse_tracking(text: &str) -> Result<Tracking> {
    Ok(match text.trim() {
        "all" => Tracking::All,
        "none" => Tracking::None,
        list => Tracking::Buses(
            list.split(',')
                .map(|s| s.trim().parse::<BusId>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("bad --track value {text:?}"))?,
        ),
    })
}

#[derive(Serialize)]
struct FitRow {
    bus: BusId,
    column: String,
    family: String,
    method: String,
    param_a: f64,
    param_b: f64,
    loglik: f64,
    p95_pct: f64,
}

/// EF fits from the analytical moments and MLF fits to the samples, per tracked cell.
fn fit_rows(case: &StudyCase, run: &McsRun, scenario: &PlacementScenario) -> Result<Vec<FitRow>> {
    let pf = harmfilt_core::pf::solve_power_flow(case, scenario)?;
    let stats = moment_stats(&build_injection_basis(case, scenario, &pf)?);
    let cols = stats.columns();
    let labels = run.column_labels();
    let mut rows = Vec::new();
    for &bus in &run.tracked {
        let i = case.network.bus_index(bus)?;
        for (c, label) in labels.iter().enumerate() {
            let xs = run.tracked_column(bus, c).expect("tracked bus");
            for family in [Family::Gamma, Family::Lognormal] {
                let fits = [("ef", ef(family, cols[c].0[i], cols[c].1[i])), ("mlf", mlf(xs, family))];
                for (method, fit) in fits {
                    let Ok(p) = fit else { continue };
                    let (param_a, param_b) = match p {
                        FitParams::Gamma { shape, scale } => (shape, scale),
                        FitParams::Lognormal { mu, sigma } => (mu, sigma),
                    };
                    rows.push(FitRow {
                        bus,
                        column: label.clone(),
                        family: format!("{family:?}").to_lowercase(),
                        method: method.into(),
                        param_a,
                        param_b,
                        loglik: log_likelihood(xs, &p).value,
                        p95_pct: 100.0 * p.quantile(0.95).sqrt(),
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn mcs(args: &StudyArgs, m: McsArgs, threads: Option<usize>) -> Result<()> {
    let mut manifest = RunManifest::new("mcs");
    manifest.threads = threads;
    manifest.seed = Some(m.seed);
    let config = load_config(args.config.as_deref())?;
    let scenario = scenario_or_base(m.scenario.as_deref(), &mut manifest)?;
    let case = load_case(args, config, &mut manifest)?;
    let tracking = parse_tracking(&m.track)?;
    if (m.fit || m.dump.is_some()) && tracking == Tracking::None {
        bail!("--fit and --dump need tracked buses; drop --track none");
    }
    let opts = McsOptions::new(m.samples, m.seed).tracking(tracking);
    manifest.stage("simulate");
    let run = if m.compare_base && !scenario.is_base() {
        let mut runs = run_mcs_paired(&case, &[PlacementScenario::base(), scenario.clone()], &opts)?;
        let treated = runs.pop().expect("two runs");
        let base = runs.pop().expect("two runs");
        let risk = risk_cdf(&base, &treated)?;
        manifest.stage("write");
        write_text(&args.out, "risk.csv", &risk.to_csv(200))?;
        write_json(&args.out, "risk.json", &risk)?;
        log::info!("risk of a higher S_THD than the base case: {:.2}%", 100.0 * risk.total().risk);
        treated
    } else {
        if m.compare_base {
            log::warn!("--compare-base ignored: the scenario is the base case");
        }
        run_mcs(&case, &scenario, &opts)?
    };
    manifest.stage("write");
    write_text(&args.out, "mcs_stats.csv", &run.stats_csv())?;
    write_json(&args.out, "mcs_summary.json", &run.summary())?;
    if m.fit {
        manifest.stage("fit");
        write_csv(&args.out, "fits.csv", &fit_rows(&case, &run, &scenario)?)?;
    }
    if let Some(path) = &m.dump {
        manifest.stage("dump");
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        run.write_dump(BufWriter::new(file))?;
        write_text(&args.out, "dump_columns.txt", &(run.dump_columns().join("\n") + "\n"))?;
    }
    manifest.write(&args.out)
}

pub fn modal(args: &StudyArgs, scenario: Option<&Path>, sweep: (f64, f64, f64), threads: Option<usize>) -> Result<()> {
    let mut manifest = RunManifest::new("modal");
    manifest.threads = threads;
    let config = load_config(args.config.as_deref())?;
    let scenario = scenario_or_base(scenario, &mut manifest)?;
    let case = load_case(args, config, &mut manifest)?;
    manifest.stage("power flow");
    let pf = harmfilt_core::pf::solve_power_flow(&case, &scenario)?;
    manifest.stage("sweep");
    let opts = ModalOptions {
        f_min_hz: sweep.0,
        f_max_hz: sweep.1,
        step_hz: sweep.2,
        ..ModalOptions::default()
    };
    let result = sweep_modes(&case, &scenario, &pf, &opts)?;
    manifest.stage("write");
    write_text(&args.out, "modal_impedance.csv", &result.impedance_csv())?;
    write_text(&args.out, "participation.csv", &result.participation_csv())?;
    write_json(&args.out, "critical.json", &result.critical)?;
    for c in &result.critical {
        log::info!(
            "mode {} peaks at {} Hz ({:.3e} pu), dominant bus {:?}",
            c.mode_id,
            c.frequency_hz,
            c.modal_impedance,
            c.dominant_bus(&result.buses)
        );
    }
    manifest.write(&args.out)
}

#[derive(Serialize)]
struct Elements {
    z_b_ohm: f64,
    r_p_ohm: f64,
    c1_farad: f64,
    c2_farad: f64,
    l_henry: f64,
}

pub fn filter_design(kv: f64, mvar: f64, ht: f64, q: f64, f0: f64, h_max: f64, h_step: f64) -> Result<()> {
    if !(h_step > 0.0 && h_max >= 1.0) {
        bail!("sweep needs --h-step > 0 and --h-max >= 1");
    }
    let f = CTypeFilter::design(0, kv, mvar, ht, q, f0)?;
    let el = Elements {
        z_b_ohm: f.z_b,
        r_p_ohm: f.r_p,
        c1_farad: f.c1,
        c2_farad: f.c2,
        l_henry: f.l,
    };
    let mut out = String::new();
    for line in serde_json::to_string_pretty(&el)?.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("h,z_re_ohm,z_im_ohm\n");
    let steps = ((h_max - 1.0) / h_step + 1e-9).floor() as usize;
    for i in 0..=steps {
        let h = 1.0 + i as f64 * h_step;
        let z = f.impedance(h);
        out.push_str(&format!("{h:.4},{:.10e},{:.10e}\n", z.re, z.im));
    }
    print!("{out}");
    Ok(())
}

pub fn report(base: &Path, treated: &Path, cases: Option<&Path>, out: &Path) -> Result<()> {
    let mut manifest = RunManifest::new("report");
    manifest.hash_input(base)?;
    manifest.hash_input(treated)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let open = |p: &Path| File::open(p).with_context(|| format!("opening {}", p.display()));
    let b: Vec<StatsRow> = report::read_rows(open(base)?).with_context(|| format!("reading {}", base.display()))?;
    let t: Vec<StatsRow> = report::read_rows(open(treated)?).with_context(|| format!("reading {}", treated.display()))?;
    let rows = report::compare(&b, &t)?;
    write_csv(out, "comparison.csv", &rows)?;
    if let Some(c) = cases {
        manifest.hash_input(c)?;
        let cases: Vec<CaseRow> = report::read_rows(open(c)?).with_context(|| format!("reading {}", c.display()))?;
        write_csv(out, "series.csv", &report::series(&cases))?;
    }
    print!("{}", report::render_flagged(&rows));
    manifest.write(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_syntax() {
        assert_eq!(parse_candidates("kv:138").unwrap(), CandidateSelection::BaseKv(138.0));
        assert_eq!(parse_candidates("3, 5,9").unwrap(), CandidateSelection::Buses(vec![3, 5, 9]));
        assert!(parse_candidates("3,x").is_err());
    }

    #[test]
    fn tracking_syntax() {
        assert_eq!(parse_tracking("all").unwrap(), Tracking::All);
        assert_eq!(parse_tracking("none").unwrap(), Tracking::None);
        assert_eq!(parse_tracking("4,7").unwrap(), Tracking::Buses(vec![4, 7]));
        assert!(parse_tracking("4;7").is_err());
    }
}
