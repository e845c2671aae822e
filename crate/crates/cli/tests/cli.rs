//! End-to-end checks of the binary: each subcommand runs against real files
//! in a temp directory and the outputs feed the next stage.

use std::path::Path;
use std::process::{Command, Output};

fn wstal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wstal"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn wstal")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = wstal(dir, args);
    assert!(
        out.status.success(),
        "wstal {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn pipeline_round_trips_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    std::fs::write(
        dir.join("synth.json"),
        r#"{"num_classes": 2, "channels": 2, "fps": 25.0, "duration": 30.0,
            "noise_std": 0.0, "min_gap_sec": 0.2, "gap_mean_sec": 2.0, "seed": 11,
            "subjects": 2, "sequences_per_subject": 1}"#,
    )
    .unwrap();
    run_ok(dir, &["synth", "--config", "synth.json", "--out", "data"]);
    assert!(dir.join("data/metadata.jsonl").is_file());
    assert!(dir.join("data/gt.jsonl").is_file());
    assert!(dir.join("data/features/s00-r00.csv").is_file());

    std::fs::write(
        dir.join("train.json"),
        r#"{"dataset": "data", "hold_out": "s01", "clip_sec": 2.0,
            "learning_rate": 1.0, "weight_decay": 0.0, "epochs": 200}"#,
    )
    .unwrap();
    run_ok(dir, &["train", "--config", "train.json", "--out", "run"]);
    assert!(dir.join("run/model.json").is_file());

    std::fs::write(
        dir.join("infer.json"),
        r#"{"model": "run/model.json", "dataset": "data", "subject": "s01"}"#,
    )
    .unwrap();
    run_ok(dir, &["infer", "--config", "infer.json", "--out", "run"]);
    let preds = std::fs::read_to_string(dir.join("run/predictions.jsonl")).unwrap();
    assert!(preds.lines().count() > 0, "no predictions written");

    run_ok(
        dir,
        &["postprocess", "run/predictions.jsonl", "--merge", "--out", "run"],
    );
    assert!(dir.join("run/postprocessed.jsonl").is_file());

    // Score the held-out subject's predictions against its ground truth.
    let gt = std::fs::read_to_string(dir.join("data/gt.jsonl")).unwrap();
    let held: String = gt
        .lines()
        .filter(|l| l.contains("s01-r00"))
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(dir.join("gt_test.jsonl"), held + "\n").unwrap();
    let table = run_ok(
        dir,
        &[
            "eval",
            "--gt",
            "gt_test.jsonl",
            "--pred",
            "run/predictions.jsonl",
            "--fps",
            "25",
            "--out",
            "run",
        ],
    );
    assert!(table.contains("mAP"), "missing header: {table}");
    assert!(dir.join("run/eval.json").is_file());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("run/eval.json")).unwrap())
            .unwrap();
    assert_eq!(report["mean_ap"], serde_json::json!(1.0));
}

#[test]
fn plan_prints_the_run_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("plan.json"),
        r#"[{"dataset": "a", "seeds": 3, "subjects": 30, "models": 10},
            {"dataset": "b", "seeds": 1, "subjects": 2, "models": 1}]"#,
    )
    .unwrap();
    let out = run_ok(dir, &["plan", "--config", "plan.json", "--out", "."]);
    assert!(out.contains("900"));
    assert!(out.contains("902"));
    assert!(dir.join("plan.json").is_file());
}

#[test]
fn run_and_report_render_the_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("run.json"),
        r#"{"name": "toy", "dataset": "rundata", "generate": true,
            "synth": {"num_classes": 2, "channels": 2, "fps": 25.0, "duration": 30.0,
                      "noise_std": 0.0, "min_gap_sec": 0.2, "gap_mean_sec": 2.0, "seed": 11},
            "subjects": 2, "sequences_per_subject": 1,
            "train": {"learning_rate": 1.0, "weight_decay": 0.0, "epochs": 200},
            "clip_sec": 2.0, "seeds": [2022], "models": ["attn"], "modes": ["full"]}"#,
    )
    .unwrap();
    let out = run_ok(dir, &["run", "--config", "run.json", "--out", "grid"]);
    assert!(out.contains("completed 2 runs"), "{out}");
    assert!(dir.join("grid/aggregate.csv").is_file());
    assert!(dir
        .join("grid/runs/toy-attn-full-s00-seed2022/report.json")
        .is_file());

    let report = run_ok(dir, &["report", "--out", "grid"]);
    assert!(report.contains("toy"), "{report}");
    assert!(report.contains("attn"), "{report}");
    assert!(report.contains("1.000"), "{report}");
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = wstal(dir, &["train", "--out", "x"]);
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("--config"), "unhelpful diagnostic: {msg}");

    let out = wstal(
        dir,
        &["eval", "--gt", "nope.jsonl", "--pred", "nope.jsonl", "--fps", "25"],
    );
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("nope.jsonl"), "diagnostic must name the file: {msg}");
}
