use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tubeharm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tubeharm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(dir: &Path, sub: &str, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    tubeharm(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn halfplane_oracle_at_half_i() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "oracle", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("oracle.json"))["result"]["rows"][0]["value"].as_f64().unwrap();
    // arg((z - 1)/(z + 1)) at z = i/2 is π - atan(4/3)
    let expected = 2.0 * (4.0f64 / 3.0).atan() / std::f64::consts::PI;
    assert!((v - expected).abs() <= 1e-9, "{v}");
    assert_eq!(format!("{v:.5}"), "0.59033");
}

#[test]
fn lindqvist_oracle_reports_kappa() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[oracle]\nkind = \"lindqvist\"\nn = 2\nm = 1\npoints = [[0.5, 0.0]]\n");
    let out = run_in(dir.path(), "oracle", &["--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let k = json(&dir.path().join("oracle.json"))["result"]["kappa"].as_f64().unwrap();
    assert!((k - std::f64::consts::FRAC_PI_4).abs() < 1e-9);
}

#[test]
fn default_barrier_sweep_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "barriers", &[]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("criterion 2: PASS"));
    let body = fs::read_to_string(dir.path().join("barriers.csv")).unwrap();
    assert!(body.starts_with("# tubeharm"));
    // 4 values of p times 3 values of γ
    assert_eq!(body.lines().filter(|l| !l.starts_with('#')).count(), 1 + 12);
}

#[test]
fn gamma_equal_to_beta_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let beta = format!("{}", 2.0f64 / 3.0); // β at (n, m, p) = (4, 2, 4)
    let out = run_in(dir.path(), "barriers", &["--p", "4", "--gamma", &beta]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("0 < γ < β"));
}

#[test]
fn codimension_one_is_rejected_for_barriers() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "barriers", &["--n", "3", "--m", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m <= n - 2"));
}

#[test]
fn inapplicable_flag_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), "oracle", &["--radii", "8,16"]).status.code(), Some(2));
}

#[test]
fn bad_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[growth]\npp = 3\n");
    assert_eq!(run_in(dir.path(), "growth", &["--config", &cfg]).status.code(), Some(2));
}

#[test]
fn report_over_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "report", &[]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no inputs"));
}

#[test]
fn sweep_cap_exits_with_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "solve", &["--max-sweeps", "2", "--levels", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let report = &json(&dir.path().join("solve.json"))["result"]["report"];
    assert_eq!(report["converged"], Value::Bool(false));
}

#[test]
fn outputs_embed_config_and_versions() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "measure", &["--n", "2", "--m", "1", "--p", "3", "--h", "0.03125", "--s", "0.25"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let env = json(&dir.path().join("measure.json"));
    assert_eq!(env["artifact"], "tubeharm");
    assert_eq!(env["format_version"], 1);
    let cfg = env["config"].as_str().unwrap();
    assert!(cfg.contains("[measure]") && cfg.contains("p = 3.0"), "{cfg}");
    let csv = fs::read_to_string(dir.path().join("measure.csv")).unwrap();
    assert!(csv.contains("# [measure]"));
}

#[test]
fn reruns_are_byte_identical_and_embedded_config_reproduces_them() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let args = ["--n", "2", "--m", "0", "--p", "3", "--seed", "11"];
    for dir in [a.path(), b.path()] {
        assert_eq!(run_in(dir, "growth", &args).status.code(), Some(0));
    }
    // the resolved config written into the output reproduces the run
    let embedded = json(&a.path().join("growth.json"))["config"].as_str().unwrap().to_string();
    let cfg = write_config(c.path(), &embedded);
    assert_eq!(run_in(c.path(), "growth", &["--config", &cfg]).status.code(), Some(0));
    for name in ["growth.json", "growth.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{name}");
        assert_eq!(x, fs::read(c.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn report_aggregates_checks() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), "growth", &["--n", "2", "--m", "0", "--p", "3"]).status.code(), Some(0));
    let out = run_in(dir.path(), "report", &[]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("criterion 7: PASS"));
    let summary = json(&dir.path().join("report.json"));
    assert_eq!(summary["result"][0]["criterion"], 7);
}

#[test]
fn scaling_in_codimension_one_has_slope_minus_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[scaling]\nn = 3\nm = 2\np = 3\nradii = [8, 16, 32]\n\n[scaling.resolution]\nh_fine_over_s = 0.125\nfine_extent_over_s = 4.0\ngrowth = 1.15\nh_max_over_r = 0.0625\n",
    );
    let out = run_in(dir.path(), "scaling", &["--config", &cfg]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    let slope = json(&dir.path().join("scaling.json"))["result"]["fit"]["slope"].as_f64().unwrap();
    assert!((slope + 1.0).abs() <= 0.1, "slope {slope}\n{stdout}");
}
