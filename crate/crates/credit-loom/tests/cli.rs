//! End-to-end tests of the `credit-loom` binary: subcommand behavior and
//! the exit-code contract (0 success, 2 configuration, 3 gateway, 4 data).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use credit_loom::datastore::write_dataset;
use credit_loom::gateway::synthetic_instances;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_credit-loom"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn sample(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("sample")
        .join(file)
}

fn fixture(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(file)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SYNTH_CONFIG: &str = r#"
[topology]
rounds = 2

[credit]
buffer_min = 3

[optimizer]
max_iterations = 1

[gateway]
mode = "synthetic"
seed = 21
role_competence = { planner = 0.9, solver = 0.8, skeptic = 0.4 }
aggregator_reliability = { "1" = 0.9, "2" = 0.6 }
"#;

#[test]
fn ingest_reports_shape_and_writes_normalized_copy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("normalized.jsonl");
    let output = run(&[
        "ingest",
        "--dataset",
        sample("dataset.jsonl").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    assert!(stdout(&output).contains("12 instances"));
    assert!(out.exists());
}

#[test]
fn ingest_rejects_malformed_dataset_with_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(
        &bad,
        r#"{"id":"x","question":"q","options":{"A":"1","B":"2","C":"3","D":"4"},"answer":"E"}"#,
    )
    .unwrap();
    let output = run(&["ingest", "--dataset", bad.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(4), "{output:?}");
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[credit]\nmystery_knob = 3\n");
    let dataset = dir.path().join("data.jsonl");
    write_dataset(&dataset, &synthetic_instances(20, 1)).unwrap();
    let output = run(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}

#[test]
fn replay_without_cache_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SYNTH_CONFIG);
    let dataset = dir.path().join("data.jsonl");
    write_dataset(&dataset, &synthetic_instances(10, 2)).unwrap();
    let output = run(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--mode",
        "replay",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3), "{output:?}");
}

#[test]
fn report_on_corrupt_log_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    std::fs::write(&log, "{\"schema\":\"credit-loom/v1\"}\n{broken\n").unwrap();
    let output = run(&["report", "--log", log.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(4), "{output:?}");
}

#[test]
fn split_run_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SYNTH_CONFIG);
    let dataset = dir.path().join("data.jsonl");
    write_dataset(&dataset, &synthetic_instances(120, 8)).unwrap();
    let split_path = dir.path().join("split.json");

    let split_out = run(&[
        "split",
        "--dataset",
        dataset.to_str().unwrap(),
        "--seed",
        "7",
        "--out",
        split_path.to_str().unwrap(),
    ]);
    assert!(split_out.status.success(), "{split_out:?}");
    assert!(stdout(&split_out).contains("100 optimization / 20 test"));

    let out_dir = dir.path().join("run");
    let run_out = run(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--split",
        split_path.to_str().unwrap(),
        "--subset",
        "test",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(run_out.status.success(), "{run_out:?}");
    assert!(stdout(&run_out).contains("20 instances"));

    let report_out = run(&[
        "report",
        "--log",
        out_dir.join("run_log.jsonl").to_str().unwrap(),
    ]);
    assert!(report_out.status.success(), "{report_out:?}");
    let text = stdout(&report_out);
    assert!(text.contains("Total predictions"));
    assert!(text.contains("Failure pattern"));
}

#[test]
fn optimize_then_export_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SYNTH_CONFIG);
    let dataset = dir.path().join("data.jsonl");
    write_dataset(&dataset, &synthetic_instances(120, 4)).unwrap();
    let split_path = dir.path().join("split.json");
    assert!(run(&[
        "split",
        "--dataset",
        dataset.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        split_path.to_str().unwrap(),
    ])
    .status
    .success());

    let out_dir = dir.path().join("opt");
    let opt_out = run(&[
        "optimize",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--split",
        split_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(opt_out.status.success(), "{opt_out:?}");
    assert!(out_dir.join("manifest.json").exists());
    assert!(out_dir.join("trajectories.jsonl").exists());
    assert!(out_dir.join("prompts/roles").exists());

    let csv_dir = dir.path().join("csv");
    let export_out = run(&[
        "export",
        "--manifest",
        out_dir.join("manifest.json").to_str().unwrap(),
        "--out",
        csv_dir.to_str().unwrap(),
    ]);
    assert!(export_out.status.success(), "{export_out:?}");
    let accuracy = std::fs::read(csv_dir.join("accuracy.csv")).unwrap();
    let credit = std::fs::read(csv_dir.join("credit.csv")).unwrap();
    assert!(accuracy.starts_with(b"iteration,accuracy\n"));
    assert!(credit.starts_with(b"iteration,kind,id,credit,buffer_count\n"));

    // Re-export is byte-identical.
    let csv_dir2 = dir.path().join("csv2");
    assert!(run(&[
        "export",
        "--manifest",
        out_dir.join("manifest.json").to_str().unwrap(),
        "--out",
        csv_dir2.to_str().unwrap(),
    ])
    .status
    .success());
    assert_eq!(
        accuracy,
        std::fs::read(csv_dir2.join("accuracy.csv")).unwrap()
    );
    assert_eq!(credit, std::fs::read(csv_dir2.join("credit.csv")).unwrap());
}

#[test]
fn shift_renders_fixture_percentages() {
    let output = run(&[
        "shift",
        "--before",
        fixture("shift_before.jsonl").to_str().unwrap(),
        "--after",
        fixture("shift_after.jsonl").to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = stdout(&output);
    assert!(text.contains("34.5%"), "{text}");
    assert!(text.contains("11.0%"), "{text}");
    assert!(text.contains("49.5%"), "{text}");
}

#[test]
fn report_reproduces_fixture_headline_numbers() {
    let output = run(&[
        "report",
        "--log",
        fixture("optimized_run_500.jsonl").to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = stdout(&output);
    assert!(text.contains("279 (55.8%)"), "{text}");
    assert!(text.contains("3.38"), "{text}");
    assert!(text.contains("81.6%"), "{text}");
}

#[test]
fn report_over_multiple_logs_adds_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SYNTH_CONFIG);
    let dataset = dir.path().join("data.jsonl");
    write_dataset(&dataset, &synthetic_instances(30, 14)).unwrap();
    let mut logs = Vec::new();
    for seed in ["31", "32"] {
        let cfg_text = SYNTH_CONFIG.replace("seed = 21", &format!("seed = {seed}"));
        std::fs::write(&config, cfg_text).unwrap();
        let out_dir = dir.path().join(format!("run{seed}"));
        assert!(run(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--dataset",
            dataset.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .status
        .success());
        logs.push(out_dir.join("run_log.jsonl"));
    }
    let output = run(&[
        "report",
        "--log",
        logs[0].to_str().unwrap(),
        "--log",
        logs[1].to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = stdout(&output);
    assert!(text.contains("Accuracy over 2 runs:"), "{text}");
    assert!(text.contains("+/-"), "{text}");
}

#[test]
fn simulate_prints_credit_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SYNTH_CONFIG);
    let output = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "5",
        "--instances",
        "40",
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = stdout(&output);
    assert!(text.contains("weak roles"));
    assert!(text.contains("alpha"));
}
