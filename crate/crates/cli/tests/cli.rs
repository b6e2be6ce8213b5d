use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapeline"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .env("SHAPELINE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn spline_build_passes_and_writes_dumps() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        &[
            "build-spline",
            "--f",
            "neg-sin",
            "--y",
            "0,-3.141592653589793",
            "--n",
            "64",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&dir.path().join("out/spline_neg-sin_n64.json"));
    assert_eq!(manifest["report"]["violations"], 0);
    let csv = std::fs::read_to_string(dir.path().join("out/spline_neg-sin_n64.csv")).unwrap();
    assert!(csv.starts_with("x,s,s2,pi,s2pi"));
}

#[test]
fn odd_inflection_count_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["build-spline", "--y", "0", "--n", "64"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("even"));
}

#[test]
fn level_below_floor_names_the_minimum() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["build-spline", "--n", "4"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("minimum 7"));
}

#[test]
fn constant_polynomial_has_zero_error() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["build-poly", "--f", "const", "--n", "8"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&dir.path().join("out/poly_const_n8.json"));
    assert_eq!(summary["error"].as_f64(), Some(0.0));
}

#[test]
fn polynomial_build_passes_shape_check() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["build-poly", "--f", "neg-sin", "--n", "16"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&dir.path().join("out/poly_neg-sin_n16.json"));
    assert_eq!(summary["report"]["violations"], 0);
    assert!(!summary["manifest"]["pieces"].as_array().unwrap().is_empty());
}

#[test]
fn calibration_records_final_multipliers() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        &[
            "build-poly",
            "--calibrate",
            "--max-m2",
            "16",
            "--f",
            "neg-sin",
            "--n",
            "16",
        ],
    );
    assert!(matches!(code(&out), 0 | 3));
    let summary = json(&dir.path().join("out/poly_neg-sin_n16.json"));
    let config = &summary["manifest"]["config"];
    let last = summary["calibration"]
        .as_array()
        .unwrap()
        .last()
        .unwrap()
        .clone();
    assert_eq!(config["m1"], last["m1"]);
    assert_eq!(config["m2"], last["m2"]);
}

#[test]
fn exhausted_calibration_exits_three() {
    let dir = TempDir::new().unwrap();
    // a budget of (2, 2) leaves negative A terms for this input
    let out = run(
        dir.path(),
        &[
            "calibrate",
            "--f",
            "neg-sin",
            "--n",
            "16",
            "--m1",
            "2",
            "--m2",
            "2",
            "--max-m2",
            "2",
        ],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/calibration_neg-sin_n16.json").exists());
}

#[test]
fn study_writes_report_and_tables() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        &["study", "--artifacts", "spline", "--n", "16,32"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("out/report.json"));
    assert_eq!(report["status"], "passed");
    assert!(report["cells"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["poly_error"].is_null()));
    let tables = std::fs::read_to_string(dir.path().join("out/tables.csv")).unwrap();
    assert_eq!(tables.lines().count(), 3);
}

#[test]
fn unknown_function_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["study", "--f", "no-such-function"]);
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("out/report.json").exists());
}

#[test]
fn printed_config_round_trips() {
    let dir = TempDir::new().unwrap();
    let first = run(
        dir.path(),
        &[
            "--print-config",
            "--y=-1,1",
            "--n",
            "8,16",
            "--m1",
            "4",
            "--kind",
            "ramp",
        ],
    );
    assert_eq!(code(&first), 0);
    let path = dir.path().join("config.json");
    std::fs::write(&path, &first.stdout).unwrap();
    let second = run(
        dir.path(),
        &["--config", path.to_str().unwrap(), "--print-config"],
    );
    assert_eq!(code(&second), 0);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, r#"{"plan": {"ns": [8], "m1": 4}}"#).unwrap();
    let out = run(
        dir.path(),
        &[
            "--config",
            path.to_str().unwrap(),
            "--n",
            "32",
            "--print-config",
        ],
    );
    let config: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(config["plan"]["ns"], serde_json::json!([32]));
    assert_eq!(config["plan"]["m1"], 4);
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, r#"{"plan": {"nss": [8]}}"#).unwrap();
    let out = run(dir.path(), &["--config", path.to_str().unwrap(), "study"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn dump_writes_table_csv() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        &[
            "dump", "--kind", "step", "--n", "16", "--j", "-3", "--stride", "512",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/step_n16_j-3_b3.csv")).unwrap();
    assert!(csv.starts_with("x,value,derivative"));
}
