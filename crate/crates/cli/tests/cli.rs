use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn small_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/model1.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(shipped).unwrap()).unwrap();
    v["n_samples"] = json!(200);
    v["constraint"]["n_prob_samples"] = json!(4000);
    v["scan"]["n_prescan"] = json!(12);
    v["diagnostics"]["reference_nodes"] = json!(200);
    v["output"]["plots"] = json!(false);
    v["compare"] = json!({});
    edit(&mut v);
    let path = dir.join("scenario.json");
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

fn ccbi(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccbi"))
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr)
        .unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&o.stderr)))
}

#[test]
fn stages_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |_| {});
    let out = dir.path().join("out");

    let o = ccbi(&cfg, &out, &["simulate-forward", "--theta", "600"]);
    assert!(o.status.success());
    let forward = std::fs::read_to_string(out.join("forward.csv")).unwrap();
    assert!(forward.starts_with("x,t_fluid,t_solid,density,velocity"));
    assert_eq!(forward.lines().count(), 1002);

    let o = ccbi(
        &cfg,
        &out,
        &[
            "build-surrogate",
            "--theta",
            "650",
            "--cache-dir",
            dir.path().join("cache").to_str().unwrap(),
        ],
    );
    assert!(o.status.success());
    let artifact = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    assert!(artifact.starts_with(dir.path().join("cache")) && artifact.exists());

    let o = ccbi(&cfg, &out, &["scan-feasible"]);
    assert!(o.status.success());
    let set: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(set["intervals"].as_array().unwrap().len(), 1);
    assert!(out.join("boundary.csv").exists());

    assert!(ccbi(&cfg, &out, &["sample"]).status.success());
    assert!(out.join("chain_0.csv").exists() && out.join("chain_1.csv").exists());

    let o = ccbi(&cfg, &out, &["diagnose"]);
    assert!(o.status.success());
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["sampler"], "crw");
    assert!(out.join("diagnostics.json").exists());
}

#[test]
fn seed_flag_changes_the_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |_| {});
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(ccbi(&cfg, &a, &["--seed", "1", "sample"]).status.success());
    assert!(ccbi(&cfg, &b, &["--seed", "2", "sample"]).status.success());
    assert_ne!(
        std::fs::read(a.join("chain_0.csv")).unwrap(),
        std::fs::read(b.join("chain_0.csv")).unwrap()
    );
}

#[test]
fn invalid_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |v| v["constraint"]["alpha"] = json!(0.0));
    let o = ccbi(&cfg, &dir.path().join("out"), &["scan-feasible"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["kind"], "validation");
    assert_eq!(err["exit_code"], 2);
}

#[test]
fn infeasible_start_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |v| {
        v["sampler"] = json!({"kind": "crw", "proposal_std": 50.0, "theta_init": 320.0})
    });
    let o = ccbi(&cfg, &dir.path().join("out"), &["sample"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["kind"], "infeasible_init");
}

#[test]
fn missing_config_is_a_validation_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_ccbi"))
        .arg("scan-feasible")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schema_needs_no_config() {
    let o = Command::new(env!("CARGO_BIN_EXE_ccbi"))
        .arg("schema")
        .output()
        .unwrap();
    assert!(o.status.success());
    let schema: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(schema["title"], "ScenarioConfig");
}
