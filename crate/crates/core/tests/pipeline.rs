use std::path::Path;

use ccbi_core::pipeline::{self, SampleRun};
use ccbi_core::scenario::{Problem, SamplerSpec, ScenarioConfig, ScenarioError};
use serde_json::{json, Value};

fn model1_json() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/model1.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// The shipped model-1 scenario shrunk to run in a few seconds.
fn small_model1() -> Value {
    let mut v = model1_json();
    v["n_samples"] = json!(400);
    v["constraint"]["n_prob_samples"] = json!(4000);
    v["scan"]["n_prescan"] = json!(12);
    v["diagnostics"]["reference_nodes"] = json!(300);
    v["diagnostics"]["checkpoints"] = json!([100, 200, 360]);
    v["output"]["plots"] = json!(true);
    v["compare"] = json!({});
    v
}

fn config(v: &Value) -> ScenarioConfig {
    ScenarioConfig::from_json_str(&v.to_string()).unwrap()
}

#[test]
fn run_writes_all_artifacts_and_crw_stays_feasible() {
    let dir = tempfile::tempdir().unwrap();
    let summary =
        pipeline::run_scenario(config(&small_model1()), Path::new("."), dir.path()).unwrap();
    for f in [
        "provenance.json",
        "data.csv",
        "data_provenance.json",
        "boundary.csv",
        "feasible_set.json",
        "reference.csv",
        "chain_0.csv",
        "chain_1.csv",
        "chain_0.postprocessed.csv",
        "diagnostics.json",
        "histogram.csv",
        "l2_series.csv",
        "bg_series.csv",
        "histogram.svg",
        "summary.json",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    assert_eq!(summary.report.raw.infeasible_fraction, 0.0);
    assert!(summary.feasible_set.is_interval());
    assert!(summary.field_audit.is_none());
    let svg = std::fs::read_to_string(dir.path().join("histogram.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn same_seed_gives_byte_identical_chains() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_model1();
    pipeline::run_scenario(config(&cfg), Path::new("."), a.path()).unwrap();
    pipeline::run_scenario(config(&cfg), Path::new("."), b.path()).unwrap();
    for f in ["chain_0.csv", "chain_1.csv", "data.csv", "boundary.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn provenance_config_reproduces_the_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline::run_scenario(config(&small_model1()), Path::new("."), a.path()).unwrap();
    let prov: Value =
        serde_json::from_slice(&std::fs::read(a.path().join("provenance.json")).unwrap()).unwrap();
    let replay: ScenarioConfig = serde_json::from_value(prov["config"].clone()).unwrap();
    pipeline::run_scenario(replay, Path::new("."), b.path()).unwrap();
    assert_eq!(
        std::fs::read(a.path().join("chain_0.csv")).unwrap(),
        std::fs::read(b.path().join("chain_0.csv")).unwrap()
    );
}

#[test]
fn surrogate_cache_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = Problem::build(config(&small_model1()), Path::new(".")).unwrap();
    let path = pipeline::build_surrogate_cached(&p, 650.0, dir.path()).unwrap();
    let again = pipeline::build_surrogate_cached(&p, 650.0, dir.path()).unwrap();
    assert_eq!(path, again);
    let artifact = pipeline::load_surrogate(&path).unwrap();
    assert_eq!(
        serde_json::to_value(&artifact.key).unwrap(),
        serde_json::to_value(pipeline::surrogate_key(&p, 650.0)).unwrap()
    );
    assert_ne!(
        pipeline::surrogate_key(&p, 650.0).file_name(),
        pipeline::surrogate_key(&p, 651.0).file_name()
    );
}

#[test]
fn compare_rows_are_the_cross_product() {
    let p = Problem::build(config(&small_model1()), Path::new(".")).unwrap();
    let set = p.admissible_set(&p.scan().unwrap());
    let reference = p.reference().unwrap();
    let samplers = vec![
        SamplerSpec::Crw {
            proposal_std: 180.0,
            theta_init: None,
        },
        SamplerSpec::ProjectedSvgd {
            n_particles: 10,
            n_generations: 20,
            step_size: 5.0,
            bandwidth: None,
        },
    ];
    let checkpoints = [50, 100, 100_000];
    let rows = pipeline::compare(&p, &samplers, &checkpoints, &set, &reference).unwrap();
    assert_eq!(rows.len(), 6);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.sampler, samplers[i / 3].name());
        assert_eq!(r.n_samples, checkpoints[i % 3]);
    }
    assert!(rows[2].l2_raw.is_nan() && rows[5].l2_raw.is_nan());
    assert!(rows[0].l2_raw.is_finite() && rows[4].l2_raw.is_finite());
}

#[test]
fn infeasible_start_is_reported() {
    let mut v = small_model1();
    v["sampler"] = json!({"kind": "crw", "proposal_std": 50.0, "theta_init": 350.0});
    let p = Problem::build(config(&v), Path::new(".")).unwrap();
    let set = p.admissible_set(&p.scan().unwrap());
    let err = pipeline::sample(&p, &p.config.sampler, &set, 10, 1, 1).unwrap_err();
    assert!(matches!(err, ScenarioError::InfeasibleInit { theta, .. } if theta == 350.0));
}

#[test]
fn svgd_sample_count_is_particles_times_generations() {
    let p = Problem::build(config(&small_model1()), Path::new(".")).unwrap();
    let set = p.admissible_set(&p.scan().unwrap());
    let spec = SamplerSpec::ProjectedSvgd {
        n_particles: 8,
        n_generations: 30,
        step_size: 5.0,
        bandwidth: None,
    };
    let run = pipeline::sample(&p, &spec, &set, 0, 1, 3).unwrap();
    let SampleRun::Particles(h) = &run else {
        panic!("particle run")
    };
    assert_eq!(h.generations.len(), 31);
    let ss = run.sample_set(0.1, |t| p.is_feasible(t));
    assert_eq!(ss.pooled().len(), 8 * 27);
}

#[test]
fn unknown_keys_and_bad_values_fail_validation() {
    let mut v = small_model1();
    v["surprise"] = json!(1);
    assert!(matches!(
        ScenarioConfig::from_json_str(&v.to_string()),
        Err(ScenarioError::Validation(_))
    ));
    let mut v = small_model1();
    v["constraint"]["alpha"] = json!(1.5);
    assert!(matches!(
        ScenarioConfig::from_json_str(&v.to_string()),
        Err(ScenarioError::Validation(_))
    ));
    let mut v = small_model1();
    v["surrogate"] = json!({"order": 6, "n_quad": 4});
    assert!(matches!(
        ScenarioConfig::from_json_str(&v.to_string()),
        Err(ScenarioError::Validation(_))
    ));
}

#[test]
fn shipped_schema_is_current() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/scenario.schema.json");
    let shipped: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(
        shipped,
        ScenarioConfig::json_schema(),
        "regenerate with `ccbi schema`"
    );
}
