use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dpsgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpsgd")).args(args).output().expect("binary runs")
}

fn write_data(dir: &Path) -> String {
    let path = dir.join("data.csv");
    let mut text = String::new();
    for i in 0..120 {
        let a = ((i * 37) % 101) as f64 / 101.0 - 0.5;
        let b = ((i * 53) % 97) as f64 / 97.0 - 0.5;
        text.push_str(&format!("{},{a},{b}\n", 0.8 * a - 0.3 * b));
    }
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn train_output_writes_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let out = dir.path().join("model.json");
    let o = dpsgd(&["train", "--mode", "output", "--data", &data, "--epsilon", "1", "--delta", "0.01", "--t", "200",
        "--eta", "0.01", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let model: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(model["weights"].as_array().unwrap().len(), 2);
    assert_eq!(model["audit"]["mode"], "output_perturbation");
    assert_eq!(model["audit"]["sensitivity"]["provenance"], "theoretical_uas");
    let derived: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(derived["derived"]["iterations"], 200);
}

#[test]
fn train_gradient_infeasible_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let o = dpsgd(&["train", "--mode", "gradient", "--data", &data, "--radius", "1", "--epsilon", "0.01", "--delta",
        "0.0001"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));

    let o = dpsgd(&["train", "--mode", "gradient", "--data", &data, "--radius", "1", "--epsilon", "0.01", "--delta",
        "0.0001", "--allow-void-claim"]);
    assert!(o.status.success());
    let model: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(model["audit"]["claimed_guarantee"].is_null());
}

#[test]
fn input_errors_exit_1() {
    let o = dpsgd(&["train", "--mode", "output", "--data", "/nonexistent.csv", "--epsilon", "1", "--delta", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = dpsgd(&["calibrate", "--mechanism", "gaussian", "--sensitivity", "1", "--epsilon", "1", "--delta", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let o = dpsgd(&["train", "--mode", "gradient", "--data", &data, "--epsilon", "1", "--delta", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn calibrate_prints_sigma() {
    let o = dpsgd(&["calibrate", "--mechanism", "output", "--sensitivity", "0.5", "--epsilon", "2", "--delta", "0.01"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["sigma"].as_f64().unwrap() - 0.8307723001718225).abs() < 1e-12);

    let o = dpsgd(&["calibrate", "--mechanism", "gradient", "--grad-bound", "1", "--n", "1000", "--epsilon", "2",
        "--delta", "1e-6"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["feasible"], true);
    assert_eq!(v["plan"]["beta"], 0.0045);
}

#[test]
fn account_composes_and_converts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("points.json");
    std::fs::write(&p, r#"[{"lambda": 101, "rho": 0.25}, {"lambda": 101, "rho": 0.25}]"#).unwrap();
    let o = dpsgd(&["account", "--points", p.to_str().unwrap(), "--delta", "1e-6"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["composed"]["rho"], 0.5);
    assert!((v["epsilon"].as_f64().unwrap() - 0.6381551055796427).abs() < 1e-12);

    std::fs::write(&p, r#"[{"lambda": 10, "rho": 0.1}, {"lambda": 11, "rho": 0.1}]"#).unwrap();
    assert_eq!(dpsgd(&["account", "--points", p.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn stability_reports_both_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let o = dpsgd(&["stability", "--data", &data, "--t", "100", "--eta", "0.01", "--trials", "25"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let bound = v["theoretical"]["delta"].as_f64().unwrap();
    assert!(v["empirical"]["max_observed"].as_f64().unwrap() <= bound);
}

#[test]
fn experiment_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let out = dir.path().join("rows.jsonl");
    std::fs::write(
        &spec,
        format!(
            r#"{{"kind": "feasibility_map", "grid": {{"n": [50, 1000], "epsilon": [0.1, 2.0]}}, "trials": 1, "seed": 3,
               "output_path": "{}"}}"#,
            out.display()
        ),
    )
    .unwrap();
    let o = dpsgd(&["experiment", "--spec", spec.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 4);
    assert!(dir.path().join("rows.jsonl.meta.json").exists());
}
