//! End-to-end tests of the `grmfilter` binary against the simulator.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_grmfilter"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, body: &str) {
    fs::write(dir.join("run.toml"), body).unwrap();
}

const BASE_CONFIG: &str = r#"
strategy = "turn_level"
n = 3
t = 20
cap = 6
tasks_file = "tasks.jsonl"

[policy]
kind = "scripted"
competence = 0.6

[judge]
kind = "oracle"
"#;

fn gen_tasks(dir: &Path, count: usize) {
    let out = run(
        &[
            "sim",
            "gen-tasks",
            "--count",
            &count.to_string(),
            "--difficulty",
            "1",
            "--seed",
            "9",
            "--out",
            "tasks.jsonl",
        ],
        dir,
    );
    assert_ok(&out);
}

#[test]
fn gen_tasks_writes_line_delimited_specs() {
    let dir = tempfile::tempdir().unwrap();
    gen_tasks(dir.path(), 5);
    let text = fs::read_to_string(dir.path().join("tasks.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 5);
    for line in text.lines() {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(value["task_id"].as_str().unwrap().starts_with("sim-"));
        assert_eq!(value["environment"]["kind"], "sim");
        assert!(!value["side"]["ground_truth_patch"].as_str().unwrap().is_empty());
    }
}

#[test]
fn collect_is_reproducible_from_config_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    gen_tasks(dir.path(), 6);
    write_config(dir.path(), BASE_CONFIG);

    let out = run(
        &["collect", "--config", "run.toml", "--out", "a", "--seed", "0"],
        dir.path(),
    );
    assert_ok(&out);
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.contains("accepted="), "{summary}");

    // Rerun from the written snapshot into another directory.
    let out = run(
        &["collect", "--config", "a/config_snapshot.toml", "--out", "b"],
        dir.path(),
    );
    assert_ok(&out);
    let a = fs::read(dir.path().join("a/dataset.jsonl")).unwrap();
    let b = fs::read(dir.path().join("b/dataset.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "snapshot rerun is byte-identical");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["finalized"], true);
    assert_eq!(manifest["counts"]["accepted"], 6);
}

#[test]
fn overrides_apply_after_config_and_unknown_keys_fail() {
    let dir = tempfile::tempdir().unwrap();
    gen_tasks(dir.path(), 4);
    write_config(dir.path(), BASE_CONFIG);

    // Last override wins; n=1 is invalid for turn_level, so validation fails.
    let out = run(
        &[
            "collect",
            "--config",
            "run.toml",
            "--out",
            "x",
            "--seed",
            "0",
            "--override",
            "n=5",
            "--override",
            "n=1",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("n >= 2"), "{stderr}");

    let out = run(
        &[
            "validate-config",
            "--config",
            "run.toml",
            "--override",
            "no_such_knob=3",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no_such_knob"), "unknown key named: {stderr}");
}

#[test]
fn validate_config_reports_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"
strategy = "segment_level"
n = 1
l = 30
t = 20
cap = 0

[policy]
kind = "scripted"
competence = 0.5

[judge]
kind = "oracle"
"#,
    );
    let out = run(&["validate-config", "--config", "run.toml"], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("n >= 2"), "{stderr}");
    assert!(stderr.contains("1 <= l <= t"), "{stderr}");
    assert!(stderr.contains("cap"), "{stderr}");

    // Bad rubric weights are caught when a rubric file is named.
    fs::write(
        dir.path().join("rubrics.toml"),
        r#"
[[rubric]]
id = "a"
title = "A"
weight = 0.5
body = "x"
[[rubric]]
id = "b"
title = "B"
weight = 0.49
body = "x"
"#,
    )
    .unwrap();
    write_config(
        dir.path(),
        &format!("rubric_file = \"rubrics.toml\"\n{BASE_CONFIG}"),
    );
    let out = run(&["validate-config", "--config", "run.toml"], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sum"), "weights-sum violation cited: {stderr}");

    // A clean config validates once the task file it names exists.
    gen_tasks(dir.path(), 2);
    write_config(dir.path(), BASE_CONFIG);
    let out = run(&["validate-config", "--config", "run.toml"], dir.path());
    assert_ok(&out);
}

#[test]
fn external_environments_fail_fast() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), BASE_CONFIG);
    let task = serde_json::json!({
        "task_id": "ext-1",
        "task_statement": "fix it",
        "side": {"ground_truth_patch": "p", "task_statement": "fix it"},
        "environment": {"kind": "external", "address": "tcp://somewhere:9"},
    });
    fs::write(dir.path().join("tasks.jsonl"), format!("{task}\n")).unwrap();
    let out = run(
        &["collect", "--config", "run.toml", "--out", "x", "--seed", "0"],
        dir.path(),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("external environment"), "{stderr}");
}

#[test]
fn easy_filter_honors_trials_and_writes_logs() {
    let dir = tempfile::tempdir().unwrap();
    gen_tasks(dir.path(), 4);
    // Competence 1.0 solves every trial, removing every task.
    write_config(
        dir.path(),
        r#"
strategy = "baseline"
t = 20
tasks_file = "tasks.jsonl"

[policy]
kind = "scripted"
competence = 1.0

[judge]
kind = "oracle"
"#,
    );
    let out = run(
        &[
            "easy-filter",
            "--config",
            "run.toml",
            "--out",
            "ef",
            "--seed",
            "0",
            "--trials",
            "1",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("trials=1"), "{stdout}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no tasks survived"), "{stderr}");

    let survivors = fs::read_to_string(dir.path().join("ef/survivors.jsonl")).unwrap();
    assert!(survivors.trim().is_empty());
    let log = fs::read_to_string(dir.path().join("ef/trial_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["outcomes"].as_array().unwrap().len(), 1);
}

#[test]
fn experiment_then_analyze_and_report() {
    let dir = tempfile::tempdir().unwrap();
    gen_tasks(dir.path(), 6);
    write_config(dir.path(), BASE_CONFIG);
    let out = run(
        &[
            "sim",
            "experiment",
            "--config",
            "run.toml",
            "--out",
            "exp",
            "--seed",
            "0",
        ],
        dir.path(),
    );
    assert_ok(&out);
    assert!(dir.path().join("exp/comparison.txt").exists());
    assert!(dir.path().join("exp/baseline/dataset.jsonl").exists());
    assert!(dir.path().join("exp/filtered/dataset.jsonl").exists());

    let out = run(
        &[
            "analyze",
            "--input",
            "exp/baseline/dataset.jsonl",
            "--input",
            "exp/filtered/dataset.jsonl",
            "--name",
            "baseline",
            "--name",
            "filtered",
            "--out",
            "analysis",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let table = fs::read_to_string(dir.path().join("analysis/table.txt")).unwrap();
    assert!(table.contains("avg_turns"));
    assert!(table.contains("d(filtered)"), "delta column for 2 inputs");
    assert!(dir.path().join("analysis/report_baseline.json").exists());

    let out = run(
        &[
            "report",
            "--input",
            "analysis/report_baseline.json",
            "--input",
            "analysis/report_filtered.json",
            "--out",
            "table2.txt",
        ],
        dir.path(),
    );
    assert_ok(&out);
    assert!(dir.path().join("table2.txt").exists());
}

#[test]
fn analyze_names_schema_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.jsonl"), "{\"task_id\": 3}\n").unwrap();
    let out = run(
        &["analyze", "--input", "bad.jsonl", "--out", "x"],
        dir.path(),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(":1:"), "line-numbered error: {stderr}");
}
