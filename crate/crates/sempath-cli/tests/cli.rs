//! End-to-end tests of the `sempath` binary: subcommands, artifacts, exit
//! codes, and the determinism guarantees scripts rely on.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sempath"))
}

fn workspace_map(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../maps")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).expect("artifact exists"))
        .expect("artifact is JSON")
}

/// A 6x4 map whose middle column is sealed by one obstacle class.
fn write_walled_map(dir: &Path) -> PathBuf {
    let path = dir.join("walled.json");
    fs::write(
        &path,
        r#"{
  "width": 6, "height": 4, "start": [0, 1], "goal": [5, 1],
  "classes": [{"name": "wall", "lambda_prior": 1.0, "rects": [[3, 0, 3, 3]]}]
}"#,
    )
    .unwrap();
    path
}

#[test]
fn mock_sampling_is_deterministic_and_k_sized() {
    let dir = tempfile::tempdir().unwrap();
    let map = workspace_map("storage_bays.json");
    let args = [
        "sample",
        "--map",
        map.to_str().unwrap(),
        "--prompt",
        "solvent transfer in progress",
        "--mock",
        "--k",
        "5",
        "--seed",
        "11",
        "--out",
        dir.path().to_str().unwrap(),
    ];
    let first = run(&args);
    assert_eq!(exit_code(&first), 0, "{}", stderr(&first));
    let cache = read_json(&dir.path().join("samples.json"));
    assert_eq!(cache["k"], 5);
    let per_class = cache["per_class"].as_object().unwrap();
    assert_eq!(per_class.len(), 3);
    for readings in per_class.values() {
        let readings = readings.as_array().unwrap();
        assert_eq!(readings.len(), 5);
        for r in readings {
            let r = r.as_f64().unwrap();
            assert!((0.0..=1.0).contains(&r), "rating {r} outside [0,1]");
        }
    }

    let second = run(&args);
    assert_eq!(stdout(&first), stdout(&second));
    let reread = read_json(&dir.path().join("samples.json"));
    assert_eq!(cache, reread, "same seed must reproduce the cache");
}

#[test]
fn live_sampling_without_api_key_fails_with_sensor_code() {
    let dir = tempfile::tempdir().unwrap();
    let map = workspace_map("storage_bays.json");
    let out = bin()
        .args([
            "sample",
            "--map",
            map.to_str().unwrap(),
            "--prompt",
            "anything",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env_remove("SEMPATH_API_KEY")
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 3);
    assert!(stderr(&out).contains("SEMPATH_API_KEY"), "{}", stderr(&out));
}

#[test]
fn unreadable_map_is_a_config_error() {
    let out = run(&[
        "plan",
        "--map",
        "/nonexistent/map.json",
        "--prompt",
        "x",
        "--mock",
    ]);
    assert_eq!(exit_code(&out), 4);
    assert!(stderr(&out).contains("map"), "{}", stderr(&out));
}

#[test]
fn unknown_flag_is_a_config_error_but_help_is_not() {
    let out = run(&["plan", "--no-such-flag"]);
    assert_eq!(exit_code(&out), 4);
    let help = run(&["--help"]);
    assert_eq!(exit_code(&help), 0);
    assert!(stdout(&help).contains("plan"));
}

#[test]
fn plan_writes_artifacts_with_embedded_config() {
    let dir = tempfile::tempdir().unwrap();
    let map = workspace_map("siteyard.json");
    let out = run(&[
        "plan",
        "--map",
        map.to_str().unwrap(),
        "--prompt",
        "night shift with heavy forklift traffic",
        "--mock",
        "--seed",
        "7",
        "--gamma",
        "1.5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));

    let plan = read_json(&dir.path().join("plan.json"));
    assert_eq!(plan["plan"]["status"], "found");
    assert_eq!(plan["config"]["gamma"], 1.5);
    assert_eq!(plan["config"]["seed"], 7);
    assert!(plan["plan"]["path"].as_array().unwrap().len() >= 2);
    assert!(plan["plan"]["expansions"]["anchor"].as_u64().unwrap() > 0);

    let metrics = read_json(&dir.path().join("metrics.json"));
    let rows = metrics["rows"].as_array().unwrap();
    let methods: Vec<&str> = rows
        .iter()
        .map(|r| r["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods, ["astar", "ours", "fixed"]);
    for row in rows {
        assert_eq!(row["status"], "found");
        assert!(row["metrics"]["min_dist"].as_f64().unwrap() > 0.0);
    }

    let svg = fs::read_to_string(dir.path().join("overlay.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("config:"), "figure embeds the resolved config");
    assert!(svg.contains("polyline"), "paths are drawn");

    // stdout carries the posterior table and the metrics table.
    let text = stdout(&out);
    assert!(text.contains("cvar[0.1]"));
    assert!(text.contains("combined_cost"));
}

#[test]
fn walled_map_yields_no_path_exit() {
    let dir = tempfile::tempdir().unwrap();
    let map = write_walled_map(dir.path());
    let out = run(&[
        "plan",
        "--map",
        map.to_str().unwrap(),
        "--prompt",
        "x",
        "--mock",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2, "{}", stderr(&out));
    let plan = read_json(&dir.path().join("plan.json"));
    assert_eq!(plan["plan"]["status"], "no_path");
    assert_eq!(plan["plan"]["combined_cost"], Value::Null);
    assert_eq!(plan["plan"]["path"], serde_json::json!([]));
    // Metrics still report the outcome truthfully.
    let metrics = read_json(&dir.path().join("metrics.json"));
    for row in metrics["rows"].as_array().unwrap() {
        assert_eq!(row["status"], "no_path");
    }
}

#[test]
fn tight_threshold_reports_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let map = workspace_map("siteyard.json");
    let out = run(&[
        "plan",
        "--map",
        map.to_str().unwrap(),
        "--prompt",
        "night shift",
        "--mock",
        "--threshold",
        "0.0001",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("threshold"), "{}", stderr(&out));
    // The artifacts still describe the path that was found.
    let plan = read_json(&dir.path().join("plan.json"));
    assert_eq!(plan["plan"]["status"], "found");
    assert_eq!(plan["config"]["threshold"], 0.0001);
}

#[test]
fn zero_gamma_plan_matches_classical_baseline_artifacts() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let map = workspace_map("siteyard.json");
    let common = |out_dir: &Path, extra: &[&str]| {
        let mut args = vec![
            "plan".to_string(),
            "--map".into(),
            map.to_str().unwrap().into(),
            "--prompt".into(),
            "calm day".into(),
            "--mock".into(),
            "--gamma".into(),
            "0".into(),
            "--out".into(),
            out_dir.to_str().unwrap().into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        let out = bin().args(&args).output().unwrap();
        assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    };
    common(dir_a.path(), &[]);
    common(dir_b.path(), &["--baseline", "astar"]);

    // The out dir is part of the embedded config; normalize it away.
    let normalize = |dir: &Path, file: &str| {
        fs::read_to_string(dir.join(file))
            .unwrap()
            .replace(dir.to_str().unwrap(), "OUT")
    };
    for file in ["metrics.json", "overlay.svg"] {
        assert_eq!(
            normalize(dir_a.path(), file),
            normalize(dir_b.path(), file),
            "{file} must match at gamma 0"
        );
    }
    let mut plan_a: Value = serde_json::from_str(&normalize(dir_a.path(), "plan.json")).unwrap();
    let mut plan_b: Value = serde_json::from_str(&normalize(dir_b.path(), "plan.json")).unwrap();
    plan_a["plan"]
        .as_object_mut()
        .unwrap()
        .remove("expansions");
    plan_b["plan"]
        .as_object_mut()
        .unwrap()
        .remove("expansions");
    assert_eq!(plan_a, plan_b, "same path and costs at gamma 0");
}

#[test]
fn repeat_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let map = workspace_map("siteyard.json");
    let args = [
        "plan",
        "--map",
        map.to_str().unwrap(),
        "--prompt",
        "night shift",
        "--mock",
        "--seed",
        "7",
        "--out",
        dir.path().to_str().unwrap(),
    ];
    assert_eq!(exit_code(&run(&args)), 0);
    let first: BTreeMap<&str, Vec<u8>> = ["plan.json", "metrics.json", "overlay.svg"]
        .iter()
        .map(|f| (*f, fs::read(dir.path().join(f)).unwrap()))
        .collect();
    assert_eq!(exit_code(&run(&args)), 0);
    for (file, bytes) in &first {
        assert_eq!(
            &fs::read(dir.path().join(file)).unwrap(),
            bytes,
            "{file} changed between identical runs"
        );
    }
}

#[test]
fn posterior_artifact_reports_every_class() {
    let dir = tempfile::tempdir().unwrap();
    let map = workspace_map("storage_bays.json");
    let out = run(&[
        "posterior",
        "--map",
        map.to_str().unwrap(),
        "--prompt",
        "solvent transfer",
        "--mock",
        "--R",
        "500",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let doc = read_json(&dir.path().join("posterior.json"));
    let classes = doc["classes"].as_object().unwrap();
    assert_eq!(classes.len(), 3);
    for (name, row) in classes {
        let mean = row["mean"].as_f64().unwrap();
        let cvar = row["cvar_alpha"].as_f64().unwrap();
        let var = row["var_alpha"].as_f64().unwrap();
        assert!(mean <= cvar + 1e-12, "{name}: mean above cvar");
        assert!(var <= cvar + 1e-12, "{name}: var above cvar");
        assert_eq!(row["R"], 500);
    }
    assert_eq!(doc["config"]["R"], 500);
}

#[test]
fn ablation_covers_requested_shot_counts() {
    let dir = tempfile::tempdir().unwrap();
    let map = workspace_map("storage_bays.json");
    let out = run(&[
        "ablate",
        "--map",
        map.to_str().unwrap(),
        "--prompt",
        "solvent transfer",
        "--mock",
        "--ks",
        "1,2,4",
        "--runs",
        "3",
        "--R",
        "200",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let doc = read_json(&dir.path().join("ablation.json"));
    assert_eq!(doc["report"]["ks"], serde_json::json!([1, 2, 4]));
    let latency = doc["latency"].as_array().unwrap();
    assert_eq!(latency.len(), 3);
    for row in latency {
        assert_eq!(row["runs"], 3);
    }
    let dispersion = doc["report"]["dispersion"].as_object().unwrap();
    assert_eq!(dispersion.len(), 3, "one dispersion series per class");
    for stds in dispersion.values() {
        assert_eq!(stds.as_array().unwrap().len(), 3, "one std per k");
    }
    let text = stdout(&out);
    assert!(text.contains("mean/shot_s"));
}

#[test]
fn ablation_with_no_shot_counts_is_a_usage_error() {
    let map = workspace_map("storage_bays.json");
    let out = run(&[
        "ablate",
        "--map",
        map.to_str().unwrap(),
        "--prompt",
        "x",
        "--mock",
        "--ks",
        "",
        "--runs",
        "2",
    ]);
    assert_eq!(exit_code(&out), 4, "{}", stderr(&out));
}

#[test]
fn render_writes_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let map = workspace_map("storage_bays.json");
    let base = [
        "render",
        "--map",
        map.to_str().unwrap(),
        "--prompt",
        "solvent transfer",
        "--mock",
        "--out",
        dir.path().to_str().unwrap(),
    ];
    let svg_run = run(&base);
    assert_eq!(exit_code(&svg_run), 0, "{}", stderr(&svg_run));
    let svg = fs::read_to_string(dir.path().join("field.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("config:"));

    let mut pgm_args = base.to_vec();
    pgm_args.extend(["--format", "pgm"]);
    let pgm_run = run(&pgm_args);
    assert_eq!(exit_code(&pgm_run), 0, "{}", stderr(&pgm_run));
    let pgm = fs::read(dir.path().join("field.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n# config:"));
    // Header = magic + comment + dims + maxval; raster = w*h*cell_pixels^2.
    let header_end = pgm
        .windows(4)
        .position(|w| w == b"255\n")
        .expect("maxval line")
        + 4;
    assert_eq!(pgm.len() - header_end, 24 * 18 * 12 * 12);
}

#[test]
fn cached_samples_round_trip_through_plan() {
    let dir = tempfile::tempdir().unwrap();
    let map = workspace_map("storage_bays.json");
    let prompt = "solvent transfer in progress";
    let sample = run(&[
        "sample",
        "--map",
        map.to_str().unwrap(),
        "--prompt",
        prompt,
        "--mock",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&sample), 0, "{}", stderr(&sample));
    let cache = dir.path().join("samples.json");

    // Planning from the cache touches no sampler: no key, no --mock.
    let out = bin()
        .args([
            "plan",
            "--map",
            map.to_str().unwrap(),
            "--prompt",
            prompt,
            "--cache",
            cache.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env_remove("SEMPATH_API_KEY")
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));

    // A different prompt no longer matches the cache digest.
    let mismatch = bin()
        .args([
            "plan",
            "--map",
            map.to_str().unwrap(),
            "--prompt",
            "a different prompt",
            "--cache",
            cache.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env_remove("SEMPATH_API_KEY")
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap();
    assert_eq!(exit_code(&mismatch), 3, "{}", stderr(&mismatch));
    assert!(stderr(&mismatch).contains("digest"), "{}", stderr(&mismatch));
}

#[test]
fn config_file_supplies_values_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let map = workspace_map("storage_bays.json");
    let config_path = dir.path().join("run.json");
    fs::write(
        &config_path,
        serde_json::to_string(&serde_json::json!({
            "map": map.to_str().unwrap(),
            "prompt": "from the config file",
            "mock": true,
            "seed": 3,
            "gamma": 0.25,
            "k": 4,
            "out": dir.path().to_str().unwrap(),
        }))
        .unwrap(),
    )
    .unwrap();

    // No flags beyond --config: file values land in the artifact.
    let out = run(&["plan", "--config", config_path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let plan = read_json(&dir.path().join("plan.json"));
    assert_eq!(plan["config"]["prompt"], "from the config file");
    assert_eq!(plan["config"]["seed"], 3);
    assert_eq!(plan["config"]["gamma"], 0.25);
    assert_eq!(plan["config"]["k"], 4);

    // Explicit flags win over the file.
    let out = run(&[
        "plan",
        "--config",
        config_path.to_str().unwrap(),
        "--seed",
        "9",
        "--gamma",
        "2.0",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let plan = read_json(&dir.path().join("plan.json"));
    assert_eq!(plan["config"]["seed"], 9);
    assert_eq!(plan["config"]["gamma"], 2.0);
    assert_eq!(plan["config"]["prompt"], "from the config file");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.json");
    fs::write(&config_path, r#"{"api_key": "sk-nope"}"#).unwrap();
    let out = run(&["plan", "--config", config_path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 4);
    assert!(stderr(&out).contains("api_key"), "{}", stderr(&out));
}

#[test]
fn injected_posteriors_bypass_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let map = workspace_map("storage_bays.json");
    let posterior_path = dir.path().join("inject.json");
    fs::write(
        &posterior_path,
        serde_json::to_string(&serde_json::json!({
            "paint_storage": {"mean": 0.5, "var_alpha": 0.7, "cvar_alpha": 0.8,
                               "R": 1, "alpha": 0.1, "seed": 0},
            "pipe_storage":  {"mean": 0.2, "var_alpha": 0.3, "cvar_alpha": 0.35,
                               "R": 1, "alpha": 0.1, "seed": 0},
            "tool_storage":  {"mean": 0.1, "var_alpha": 0.2, "cvar_alpha": 0.25,
                               "R": 1, "alpha": 0.1, "seed": 0}
        }))
        .unwrap(),
    )
    .unwrap();

    // No sampler is reachable: no key, no mock, no cache.
    let out = bin()
        .args([
            "plan",
            "--map",
            map.to_str().unwrap(),
            "--prompt",
            "ignored",
            "--posterior",
            posterior_path.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env_remove("SEMPATH_API_KEY")
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("0.800"), "injected cvar echoed: {text}");

    // A file missing one class is rejected up front.
    fs::write(
        &posterior_path,
        r#"{"paint_storage": {"mean": 0.5, "var_alpha": 0.7, "cvar_alpha": 0.8,
                              "R": 1, "alpha": 0.1, "seed": 0}}"#,
    )
    .unwrap();
    let missing = run(&[
        "plan",
        "--map",
        map.to_str().unwrap(),
        "--prompt",
        "ignored",
        "--posterior",
        posterior_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&missing), 4, "{}", stderr(&missing));
}
