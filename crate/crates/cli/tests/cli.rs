use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn gategeom(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gategeom"))
        .arg("--out-root")
        .arg(root)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn tiny_config() -> Value {
    json!({
        "alphas": [0.0, 1.0],
        "seeds": [0],
        "condition_numbers": [2.0, 12.0],
        "ablation": ["ungated"],
        "data": {"n_train": 64, "n_test": 32},
        "train": {"epochs": 1, "batch_size": 32, "model": {"d_model": 8, "d_hidden": 8}},
        "proxy": {"n_directions": 4, "eval_points": 4},
        "boundary": {"resolution": 4}
    })
}

#[test]
fn verify_sphere_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = gategeom(dir.path(), &["verify", "sphere"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["pass"], json!(true));
    assert_eq!(report["checks"], json!(["sphere"]));
    assert!(!report["records"].as_array().unwrap().is_empty());
    let saved: Value = serde_json::from_slice(&std::fs::read(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(saved, report);
}

#[test]
fn verify_only_flag_combines_with_positionals() {
    let dir = tempfile::tempdir().unwrap();
    let out = gategeom(dir.path(), &["verify", "flatness", "--only", "product-rule,sphere"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["checks"], json!(["flatness", "product-rule", "sphere"]));
}

#[test]
fn unknown_selector_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gategeom(dir.path(), &["verify", "no-such-check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-check"));
}

#[test]
fn bad_flags_and_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gategeom(dir.path(), &["verify", "--seed", "x"]).status.code(), Some(2));
    assert_eq!(gategeom(dir.path(), &["sweep", "--task", "spiral", "--print-config"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"alphas": [0.0], "bogus": 1}"#).unwrap();
    let out = gategeom(dir.path(), &["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(
        gategeom(dir.path(), &["train", "--config", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn print_config_shows_defaults_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = stdout_json(&gategeom(dir.path(), &["sweep", "--print-config"]));
    assert_eq!(sweep["alphas"], json!([0.0, 0.25, 0.5, 1.0, 1.5]));
    assert_eq!(sweep["seeds"], json!([0, 1, 2, 3, 4]));
    assert_eq!(sweep["task"], json!("all"));

    let over = stdout_json(&gategeom(
        dir.path(),
        &["sweep", "--print-config", "--task", "linear", "--seeds", "3,4", "--workers", "2"],
    ));
    assert_eq!(over["task"], json!("linear"));
    assert_eq!(over["seeds"], json!([3, 4]));
    assert_eq!(over["workers"], json!(2));

    let train = stdout_json(&gategeom(dir.path(), &["train", "--print-config", "--alpha", "0.5"]));
    assert_eq!(train["alpha"], json!(0.5));
    assert_eq!(train["task"], json!("curved"));

    let verify = stdout_json(&gategeom(dir.path(), &["verify", "--print-config", "--L", "1,3"]));
    assert_eq!(verify["depth_layers"], json!([1, 3]));
}

#[test]
fn report_on_empty_directory_is_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    let out = gategeom(dir.path(), &["report", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("INCOMPLETE"));
}

#[test]
fn tiny_sweep_then_report_and_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    std::fs::write(&cfg, serde_json::to_vec(&tiny_config()).unwrap()).unwrap();
    let sweep_dir = dir.path().join("sweep");

    let out = gategeom(dir.path(), &["sweep", "--config", cfg.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "manifest.json",
        "records.csv",
        "fig2_gate_vs_curvature.csv",
        "fig3_boundaries.csv",
        "fig5_ablation.csv",
        "tableA4_linear_control.csv",
    ] {
        assert!(sweep_dir.join(name).is_file(), "{name}");
    }
    let records = std::fs::read(sweep_dir.join("records.csv")).unwrap();

    let again = gategeom(dir.path(), &["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&again.stderr).contains("0 cells executed"));
    assert_eq!(std::fs::read(sweep_dir.join("records.csv")).unwrap(), records);

    // One seed on tiny models: complete, but the scorecard need not pass.
    let report = gategeom(dir.path(), &["report"]);
    assert!(matches!(report.status.code(), Some(0) | Some(1)));
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(!text.contains("INCOMPLETE"), "{text}");
    assert!(text.contains("criterion 11"));
    assert!(sweep_dir.join("scorecard.txt").is_file());
    assert!(sweep_dir.join("report.json").is_file());

    let ckpt = std::fs::read_dir(sweep_dir.join("checkpoints")).unwrap().next().unwrap().unwrap().path();
    let csv = dir.path().join("grid.csv");
    let out = gategeom(
        dir.path(),
        &[
            "export-boundary",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--resolution",
            "6",
            "--out",
            csv.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 36);
}

#[test]
fn train_writes_checkpoint_and_result() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    let config = json!({
        "alpha": 0.5,
        "data": {"n_train": 64, "n_test": 32},
        "train": {"epochs": 1, "batch_size": 32, "model": {"d_model": 8, "d_hidden": 8}},
        "proxy": {"n_directions": 4, "eval_points": 4}
    });
    std::fs::write(&cfg, serde_json::to_vec(&config).unwrap()).unwrap();
    let out = gategeom(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--epochs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let result = stdout_json(&out);
    assert_eq!(result["status"]["status"], json!("completed"));
    assert_eq!(result["epochs"].as_array().unwrap().len(), 2);
    let train_dir = dir.path().join("train");
    for name in ["checkpoint.json", "result.json", "resolved_config.json", "metrics.jsonl"] {
        assert!(train_dir.join(name).is_file(), "{name}");
    }
    let resolved: Value =
        serde_json::from_slice(&std::fs::read(train_dir.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["train"]["epochs"], json!(2));
}
