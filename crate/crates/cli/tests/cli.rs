use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("harmfilt-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn harmfilt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harmfilt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn study(command: &str, out: &Path) -> Vec<String> {
    vec![
        command.to_string(),
        "--case".into(),
        data("ieee14.cdf").display().to_string(),
        "--config".into(),
        data("ieee14_study.toml").display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ]
}

fn run_ok(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = harmfilt(&refs);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(harmfilt(&["analyze"]).status.code(), Some(2));
    assert_eq!(harmfilt(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(harmfilt(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_case_file_exits_1() {
    let out = scratch("missing");
    let o = harmfilt(&["analyze", "--case", "/nonexistent.cdf", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_harmfilt"))
        .args(["filter-design", "--kv", "138", "--mvar", "20", "--q", "1.5"])
        .env("HARMFILT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn filter_design_sweep_dips_at_tuning_order() {
    let o = harmfilt(&["filter-design", "--kv", "138", "--mvar", "20", "--q", "1.5", "--h-max", "5", "--h-step", "0.5"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<(f64, f64)> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('h'))
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[0], f[1].hypot(f[2]))
        })
        .collect();
    assert_eq!(rows.len(), 9);
    let min = rows.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(min.0, 3.0);
    assert!(text.contains("\"l_henry\""));
}

#[test]
fn analyze_then_report() {
    let base = scratch("base");
    run_ok(&study("analyze", &base));
    for f in ["stats.csv", "summary.json", "manifest.json"] {
        assert!(base.join(f).exists(), "{f} missing");
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(base.join("summary.json")).unwrap()).unwrap();
    assert!(summary["e_sthd"].as_f64().unwrap() > 0.0);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(base.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let treated = scratch("treated");
    let scenario = treated.join("scenario.json");
    std::fs::write(&scenario, r#"{"id":"f7","filters":[{"bus":7,"q":1.5,"q_mvar":6.0}]}"#).unwrap();
    let mut args = study("analyze", &treated);
    args.extend(["--scenario".into(), scenario.display().to_string(), "--dump".into()]);
    run_ok(&args);
    assert!(treated.join("z_diag.csv").exists());

    let cmp = scratch("cmp");
    let o = run_ok(&[
        "report".into(),
        "--base".into(),
        base.join("stats.csv").display().to_string(),
        "--treated".into(),
        treated.join("stats.csv").display().to_string(),
        "--out".into(),
        cmp.display().to_string(),
    ]);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("over limit after treatment"));
    let text = std::fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 14 * 4);
}

#[test]
fn place_writes_solution_usable_as_scenario() {
    let out = scratch("place");
    let mut args = study("place", &out);
    args.extend(["--q-grid".into(), "1.2,1.6,2.0".into(), "--max-filters".into(), "2".into()]);
    run_ok(&args);
    let sol: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("solution.json")).unwrap()).unwrap();
    assert!(sol["scenario"]["filters"].is_array());
    assert!(std::fs::read_to_string(out.join("cases.csv")).unwrap().starts_with("case,"));

    let again = scratch("place-analyze");
    let mut args = study("analyze", &again);
    args.extend(["--scenario".into(), out.join("solution.json").display().to_string()]);
    run_ok(&args);
}

#[test]
fn mcs_is_repeatable() {
    let run = |name: &str| {
        let out = scratch(name);
        let mut args = study("mcs", &out);
        args.extend(["--samples".into(), "3000".into(), "--seed".into(), "11".into(), "--fit".into()]);
        run_ok(&args);
        (
            std::fs::read_to_string(out.join("mcs_stats.csv")).unwrap(),
            std::fs::read_to_string(out.join("fits.csv")).unwrap(),
        )
    };
    let a = run("mcs-a");
    let b = run("mcs-b");
    assert_eq!(a, b);
    assert!(a.1.lines().any(|l| l.contains("gamma,mlf")));
}
