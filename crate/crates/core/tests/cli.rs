use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pse"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn simulate_monopoly(dir: &Path) -> String {
    let path = dir.join("monopoly.csv");
    let p = path.to_str().unwrap().to_string();
    let out = pse(&["simulate", "--model", "monopoly", "--n", "300", "--seed", "3", "--out", &p]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn estimate_prints_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_monopoly(dir.path());
    let out = pse(&[
        "estimate", "--model", "monopoly", "--algorithm", "joint", "--omega", "1e6", "--k", "6", "--data", &data,
    ]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["schema"], "pse-report/1");
    let r = &doc["results"][0];
    assert_eq!(r["algorithm"], "joint");
    assert_eq!(r["omega"].as_f64(), Some(1e6));
    assert_eq!(r["parameters"][0]["name"], "theta");
    let theta = r["parameters"][0]["estimate"].as_f64().unwrap();
    assert!((theta - 1.0).abs() < 0.5, "theta {theta}");
}

#[test]
fn auto_omega_defaults_follow_the_selection_rule() {
    let out = pse(&["estimate", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = stdout(&out);
    for default in ["[default: 0.05]", "[default: 10]", "[default: 0.95]"] {
        assert!(help.contains(default), "missing {default} in\n{help}");
    }
}

#[test]
fn auto_omega_writes_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_monopoly(dir.path());
    let path = dir.path().join("path.csv");
    let out = pse(&[
        "estimate",
        "--model",
        "monopoly",
        "--data",
        &data,
        "--auto-omega",
        "--format",
        "csv",
        "--omega-path",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("parameter,estimate,se,ci_lo,ci_hi,algorithm"));
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("omega,theta,theta_ci_lo,theta_ci_hi,overlap"));
    let omegas: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(omegas.len() >= 2);
    assert_eq!(omegas[0], 10.0);
    for w in omegas.windows(2) {
        assert!((w[1] / w[0] - 10.0).abs() < 1e-9);
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = pse(&["estimate", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pse(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn estimation_failures_exit_one() {
    let out = pse(&["estimate", "--model", "monopoly", "--data", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "walmart,kmart,spc\n1,2,8.0\n").unwrap();
    let out = pse(&["estimate", "--model", "entry", "--data", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn check_derivatives_passes() {
    let out = pse(&["check-derivatives", "--points", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
}

#[test]
fn entry_round_trip_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("markets.csv");
    let d = data.to_str().unwrap();
    let out = pse(&["simulate", "--model", "entry", "--n", "400", "--seed", "5", "--out", d]);
    assert_eq!(out.status.code(), Some(0));
    let out = pse(&["estimate", "--model", "entry", "--algorithm", "mle", "--data", d, "--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let names: Vec<&str> = doc["results"][0]["parameters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["name"].as_str().unwrap())
        .collect();
    assert_eq!(names.len(), 5);
}
