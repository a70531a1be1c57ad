use std::path::Path;
use std::process::Command;

use gfc_stability::scenario::{
    catalog_entry, emit_config, emit_report, run_scenario, ConsistencyReport, Expectation, Prediction,
};

fn gfcstab(args: &[&str]) -> (i32, String, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_gfcstab")).args(args).output().unwrap();
    (
        o.status.code().unwrap(),
        String::from_utf8(o.stdout).unwrap(),
        String::from_utf8(o.stderr).unwrap(),
    )
}

fn in_process(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["gfcstab"];
    argv.extend_from_slice(args);
    let code = gfc_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(gfcstab(&["--help"]).0, 0);
    assert_eq!(gfcstab(&[]).0, 1);
    assert_eq!(gfcstab(&["frobnicate"]).0, 1);
    assert_eq!(in_process(&["simulate", "--scenario", "fig7", "--format", "png"]).0, 1);
    assert_eq!(in_process(&["roa", "--bracket", "1"]).0, 1);
}

#[test]
fn equilibria_table() {
    let (code, out, _) = in_process(&["equilibria", "--load-kw", "175"]);
    assert_eq!(code, 0);
    assert!(out.contains("2439.953908"), "{out}");
    assert!(out.contains("2396.913"), "{out}");
    let (code, out, _) = in_process(&["equilibria", "--load-kw", "179", "--json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v[0]["x_bar_1"].is_null());
}

#[test]
fn bad_configs_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let tau = write(d.path(), "tau.toml", "id = \"x\"\nmodel = \"class_a_dc\"\n[converter]\ntau_c = 0.1\n");
    let (code, _, err) = in_process(&["simulate", "--config", &tau]);
    assert_eq!(code, 2);
    assert!(err.contains("neglected"), "{err}");

    let syntax = write(d.path(), "syntax.toml", "id = \"x\"\nmodel = = 1\n");
    let (code, _, err) = in_process(&["certify", "--config", &syntax]);
    assert_eq!(code, 2);
    assert!(err.contains("line 2"), "{err}");

    let neg = write(d.path(), "neg.toml", "id = \"x\"\nmodel = \"class_a_dc\"\n[converter]\ni_dc_max = -1\n");
    let (code, _, err) = in_process(&["batch", &neg]);
    assert_eq!(code, 2);
    assert!(err.contains("i_dc_max"), "{err}");

    assert_eq!(in_process(&["simulate", "--scenario", "fig7", "--tol", "2"]).0, 2);
    assert_eq!(in_process(&["simulate"]).0, 2);
    assert_eq!(in_process(&["roa", "--scenario", "fig10"]).0, 2);
    assert_eq!(in_process(&["batch", "/no/such/file.toml"]).0, 2);
}

#[test]
fn simulate_writes_csv_and_svg() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path().to_str().unwrap();
    let (code, out, _) = gfcstab(&["simulate", "--scenario", "fig6_below", "--out", dir, "--format", "both"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("Collapsed"), "{out}");
    let csv = std::fs::read_to_string(d.path().join("fig6_below.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,v_dc,P_c,sat_active");
    let svg = std::fs::read_to_string(d.path().join("fig6_below.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let (code, out, _) = in_process(&["simulate", "--scenario", "fig10", "--json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["row"]["status"], "agree");
}

#[test]
fn certify_prints_json() {
    let (code, out, _) = in_process(&["certify", "--scenario", "overload_179kw"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["prediction"], "collapse");
    assert_eq!(v["certificates"]["instability"]["holds"], true);
}

#[test]
fn roa_bisection_finds_lower_equilibrium() {
    let (code, out, _) = in_process(&["roa", "--scenario", "fig6_below", "--bracket", "2390", "2400"]);
    assert_eq!(code, 0);
    let b: f64 = out.split("boundary = ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!((b - 2396.9135).abs() < 0.05, "{b}");
}

#[test]
fn catalog_batch_is_consistent() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path().join("scen");
    let (code, _, _) = in_process(&["catalog", "--out", dir.to_str().unwrap()]);
    assert_eq!(code, 0);
    let json = d.path().join("report.json");
    let (code, out, _) = gfcstab(&["batch", dir.to_str().unwrap(), "--json", json.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("known open question"), "{out}");
    assert!(out.contains("11 scenarios, 0 disagreements"), "{out}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    let ids: Vec<&str> = v["rows"].as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn wrong_expectation_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = catalog_entry("fig7").unwrap();
    cfg.expect = Some(Expectation::Collapsed);
    let p = write(d.path(), "fig7.toml", &emit_config(&cfg));
    let (code, out, err) = in_process(&["batch", "--config", &p]);
    assert_eq!(code, 3, "{out}");
    assert!(out.contains("DISAGREE"));
    assert!(err.contains("consistency"));
}

#[test]
fn injected_wrong_certificate_exits_3() {
    let run = run_scenario(&catalog_entry("fig6_below").unwrap()).unwrap();
    let mut row = run.row.clone();
    assert_eq!(row.prediction, Prediction::Collapse);
    row.prediction = Prediction::Converge;
    row.judge();
    let ok = run_scenario(&catalog_entry("fig6_above").unwrap()).unwrap().row;
    let (text, _, code) = emit_report(&ConsistencyReport::new(vec![row, ok]).unwrap());
    assert_eq!(code, 3);
    assert!(text.contains("1 disagreements"), "{text}");
}
