//! End-to-end command-line tests: calibrate -> holdout -> report on a
//! scripted sim2sim experiment, plus usage-error and overwrite handling.

use std::path::Path;

use sysid::cli::run;
use sysid::recommend::{SchemaRecommendation, SchemaResponse};

fn write_script(path: &Path) {
    let entries: Vec<SchemaResponse> = [60.0, 90.0, 120.0]
        .iter()
        .map(|d| SchemaResponse {
            analysis: String::new(),
            parameter_recommendations: vec![SchemaRecommendation {
                name: "damping".into(),
                current_value: 0.0,
                suggested_value: *d,
                reason: "scripted".into(),
            }],
            confidence: 0.5,
            additional_notes: String::new(),
        })
        .collect();
    std::fs::write(path, serde_json::to_string(&entries).unwrap()).unwrap();
}

fn write_spec(dir: &Path) -> std::path::PathBuf {
    let script = dir.join("script.json");
    write_script(&script);
    let spec = dir.join("exp.toml");
    let out = dir.join("runs");
    std::fs::write(
        &spec,
        format!(
            r#"
platform = "finger"
mode = "sim2sim"
method = "scripted"
seeds = [0, 1]
budget = 3
repeats = 2
out_dir = {out:?}
script = {script:?}
"#,
            out = out.display().to_string(),
            script = script.display().to_string(),
        ),
    )
    .unwrap();
    spec
}

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["sysid"];
    argv.extend(args);
    run(argv)
}

#[test]
fn calibrate_holdout_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let spec_s = spec.to_str().unwrap();
    let runs = dir.path().join("runs");

    assert_eq!(cli(&["calibrate", "--spec", spec_s]), 0);
    for seed in [0, 1] {
        let d = runs.join("scripted").join(format!("seed_{seed}"));
        assert!(d.join("run.json").exists(), "missing run.json for seed {seed}");
        let hist = std::fs::read_to_string(d.join("history.csv")).unwrap();
        assert_eq!(hist.lines().count(), 4, "header plus one row per iteration");
    }

    // refuses to overwrite without --force
    assert_eq!(cli(&["calibrate", "--spec", spec_s]), 2);

    // deterministic: forced rerun reproduces history.csv byte for byte
    let first = std::fs::read(runs.join("scripted/seed_0/history.csv")).unwrap();
    assert_eq!(cli(&["calibrate", "--spec", spec_s, "--force"]), 0);
    let second = std::fs::read(runs.join("scripted/seed_0/history.csv")).unwrap();
    assert_eq!(first, second);

    assert_eq!(cli(&["holdout", "--spec", spec_s]), 0);
    let holdout = std::fs::read_to_string(runs.join("scripted/holdout.csv")).unwrap();
    // 2 seeds x 4 holdouts x 2 repeats
    assert_eq!(holdout.lines().count(), 17, "header plus 16 rows:\n{holdout}");
    assert!(holdout.lines().nth(1).unwrap().starts_with("finger,scripted,0,1,1,"));

    let runs_s = runs.to_str().unwrap();
    assert_eq!(cli(&["report", runs_s]), 0);
    let ranks = std::fs::read_to_string(runs.join("ranks.csv")).unwrap();
    assert!(ranks.contains("average,scripted,,1"), "single method ranks 1:\n{ranks}");
    assert!(runs.join("confidence.csv").exists());
    assert!(
        runs.join("scripted/seed_0/recovery.csv").exists(),
        "sim2sim runs get recovery tables"
    );
    assert!(runs.join("scripted/seed_0/recovery_distance.csv").exists());

    // report also refuses to overwrite
    assert_eq!(cli(&["report", runs_s]), 2);
    assert_eq!(cli(&["report", runs_s, "--force"]), 0);
}

#[test]
fn replay_without_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("exp.toml");
    std::fs::write(
        &spec,
        r#"
platform = "finger"
mode = "replay"
method = "random"
seeds = [0]
out_dir = "runs"
"#,
    )
    .unwrap();
    assert_eq!(cli(&["calibrate", "--spec", spec.to_str().unwrap()]), 2);
}

#[test]
fn invalid_overrides_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let spec_s = spec.to_str().unwrap();
    // duplicate seeds
    assert_eq!(cli(&["calibrate", "--spec", spec_s, "--seeds", "0,0"]), 2);
    // unknown ablation flag
    assert_eq!(cli(&["calibrate", "--spec", spec_s, "--flags", "no-everything"]), 2);
    // unknown method
    assert_eq!(cli(&["calibrate", "--spec", spec_s, "--method", "oracle"]), 2);
    // missing spec file
    assert_eq!(cli(&["calibrate", "--spec", "/nonexistent/exp.toml"]), 3);
    // bad usage entirely
    assert_eq!(cli(&["frobnicate"]), 2);
}

#[test]
fn bounds_file_cross_check() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    write_script(&script);
    // a bounds file disagreeing with the built-in table is rejected
    let bad = dir.path().join("bad.bounds");
    std::fs::write(
        &bad,
        r#"
[[parameter]]
name = "damping"
min = 0.0
max = 1.0
unit = ""
kind = "physics"
"#,
    )
    .unwrap();
    let spec = dir.path().join("exp.toml");
    std::fs::write(
        &spec,
        format!(
            r#"
platform = "finger"
method = "scripted"
seeds = [0]
out_dir = {out:?}
script = {script:?}
bounds_file = {bad:?}
"#,
            out = dir.path().join("runs").display().to_string(),
            script = script.display().to_string(),
            bad = bad.display().to_string(),
        ),
    )
    .unwrap();
    assert_eq!(cli(&["calibrate", "--spec", spec.to_str().unwrap()]), 2);
}
