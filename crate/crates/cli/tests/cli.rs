use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn reldisc(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_reldisc"));
    cmd.args(args).env_remove("RELDISC_OUTPUT_DIR");
    cmd
}

fn run(args: &[&str]) -> Output {
    reldisc(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic corpus plus config in a fresh directory.
fn demo(per_relation: usize) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let per = per_relation.to_string();
    ok(&["synth", "--out", s(dir.path()), "--per-relation", &per]);
    let conf = dir.path().join("experiment.conf");
    (dir, conf)
}

#[test]
fn prepare_is_deterministic_and_idempotent() {
    let (dir, conf) = demo(40);
    ok(&["prepare", "-c", s(&conf)]);
    let run_dir = dir.path().join("run");
    let manifest = fs::read(run_dir.join("split.manifest")).unwrap();
    let views = fs::read(run_dir.join("views.jsonl")).unwrap();
    ok(&["prepare", "-c", s(&conf)]);
    assert_eq!(fs::read(run_dir.join("split.manifest")).unwrap(), manifest);
    assert_eq!(fs::read(run_dir.join("views.jsonl")).unwrap(), views);
}

#[test]
fn eighty_relations_at_twenty_percent_give_sixteen_novel() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = serde_json::Map::new();
    for r in 0..80 {
        let records: Vec<Value> = (0..10)
            .map(|i| {
                json!({
                    "id": format!("P{r}-{i}"),
                    "tokens": ["Alpha", "met", "Beta", "yesterday"],
                    "h": ["Alpha", "Q1", [[0]]],
                    "t": ["Beta", "Q2", [[2]]],
                })
            })
            .collect();
        doc.insert(format!("P{r}"), json!(records));
    }
    let data = dir.path().join("data.json");
    fs::write(&data, Value::Object(doc).to_string()).unwrap();
    let empty = dir.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let out_dir = dir.path().join("out");
    ok(&[
        "prepare",
        "--dataset",
        s(&data),
        "--entity-types",
        s(&empty),
        "--synonyms",
        s(&empty),
        "--novel-ratio",
        "0.2",
        "--split-policy",
        "per-relation:2,4,4",
        "--output-dir",
        s(&out_dir),
    ]);
    let manifest = fs::read_to_string(out_dir.join("split.manifest")).unwrap();
    let novel = manifest
        .lines()
        .skip_while(|l| *l != "[novel_relations]")
        .skip(1)
        .take_while(|l| !l.starts_with('['))
        .count();
    assert_eq!(novel, 16, "{manifest}");
}

#[test]
fn bad_paths_and_missing_lexicons_fail() {
    let (dir, conf) = demo(40);
    let out = run(&[
        "prepare",
        "-c",
        s(&conf),
        "--dataset",
        "/nonexistent/data.json",
    ]);
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("/nonexistent/data.json"),
        "{}",
        stderr(&out)
    );

    let data = dir.path().join("dataset.json");
    let out = run(&[
        "prepare",
        "--dataset",
        s(&data),
        "--output-dir",
        s(&dir.path().join("x")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--entity-types"), "{}", stderr(&out));

    let out = run(&["prepare", "-c", s(&conf), "--theta", "2"]);
    assert!(!out.status.success());
    let out = run(&["prepare", "-c", s(&conf), "--backend", "bert"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("not available"));
}

#[test]
fn train_and_evaluate_need_their_inputs() {
    let (dir, conf) = demo(40);
    let out = run(&["train", "-c", s(&conf)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("reldisc prepare"));
    ok(&["prepare", "-c", s(&conf)]);
    let out = run(&["evaluate", "-c", s(&conf)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("does not exist"));
    let out = run(&["train", "-c", s(&conf), "--resume"]);
    assert!(!out.status.success());
    assert!(!dir.path().join("run/metrics.ndjson").exists());
}

#[test]
fn synthetic_run_trains_evaluates_and_describes_clusters() {
    let (dir, conf) = demo(250);
    ok(&["prepare", "-c", s(&conf)]);
    let start = std::time::Instant::now();
    ok(&[
        "train",
        "-c",
        s(&conf),
        "--max-epochs",
        "25",
        "--patience",
        "25",
    ]);
    assert!(start.elapsed().as_secs() < 300);
    let out = ok(&["evaluate", "-c", s(&conf)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["all"]["acc"].as_f64().unwrap() >= 0.9, "{report}");
    assert!(report["cos"].as_f64().is_some());

    let run_dir = dir.path().join("run");
    let words = fs::read_to_string(run_dir.join("relation_words.tsv")).unwrap();
    assert!(
        words
            .lines()
            .any(|l| l == "crosses\tcross,crosses,crossing"),
        "{words}"
    );
    let tsv = fs::read_to_string(run_dir.join("report.tsv")).unwrap();
    assert!(tsv.lines().any(|l| l.starts_with("acc\tnov\t")));
    let log = fs::read_to_string(run_dir.join("metrics.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 25);
}

#[test]
fn resume_continues_from_the_saved_epoch() {
    let (dir, conf) = demo(40);
    ok(&["prepare", "-c", s(&conf)]);
    ok(&[
        "train",
        "-c",
        s(&conf),
        "--max-epochs",
        "2",
        "--warmup-epochs",
        "1",
    ]);
    let out = ok(&[
        "train",
        "-c",
        s(&conf),
        "--resume",
        "--max-epochs",
        "4",
        "--warmup-epochs",
        "1",
    ]);
    assert!(stderr(&out).contains("after epoch 2"), "{}", stderr(&out));
    let resumed = fs::read_to_string(dir.path().join("run/metrics.ndjson")).unwrap();
    let epochs: Vec<u64> = resumed
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["epoch"]
                .as_u64()
                .unwrap()
        })
        .collect();
    assert_eq!(epochs, vec![1, 2, 3, 4]);

    // Same log as an uninterrupted run.
    let straight = dir.path().join("straight");
    ok(&["prepare", "-c", s(&conf), "--output-dir", s(&straight)]);
    ok(&[
        "train",
        "-c",
        s(&conf),
        "--max-epochs",
        "4",
        "--warmup-epochs",
        "1",
        "--output-dir",
        s(&straight),
    ]);
    assert_eq!(
        fs::read_to_string(straight.join("metrics.ndjson")).unwrap(),
        resumed
    );
}

#[test]
fn unknown_relation_count_is_estimated_and_logged() {
    let (_dir, conf) = demo(40);
    ok(&["prepare", "-c", s(&conf)]);
    let out = ok(&[
        "train",
        "-c",
        s(&conf),
        "--known-k",
        "false",
        "--k-init",
        "12",
        "--max-epochs",
        "1",
        "--warmup-epochs",
        "1",
    ]);
    assert!(
        stderr(&out).contains("estimated relation count"),
        "{}",
        stderr(&out)
    );
    let out = ok(&["estimate-k", "-c", s(&conf), "--k-init", "12"]);
    let k: usize = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((1..=12).contains(&k));
}

#[test]
fn untrained_checkpoint_still_reports() {
    let (_dir, conf) = demo(40);
    ok(&["prepare", "-c", s(&conf)]);
    ok(&[
        "train",
        "-c",
        s(&conf),
        "--max-epochs",
        "0",
        "--warmup-epochs",
        "0",
    ]);
    let out = ok(&["evaluate", "-c", s(&conf)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let acc = report["all"]["acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn predict_reports_bad_rows_and_continues() {
    let (dir, conf) = demo(40);
    ok(&["prepare", "-c", s(&conf)]);
    ok(&[
        "train",
        "-c",
        s(&conf),
        "--max-epochs",
        "1",
        "--warmup-epochs",
        "1",
    ]);
    let input = dir.path().join("input.jsonl");
    let good = json!({
        "tokens": ["The", "bridge", "crosses", "the", "Danube"],
        "h": ["bridge", "Q1", [[1]]],
        "t": ["Danube", "Q2", [[4]]],
    });
    let bad_span = json!({
        "tokens": ["a", "b"],
        "h": ["a", "Q1", [[0]]],
        "t": ["z", "Q2", [[7]]],
    });
    fs::write(
        &input,
        format!("{good}\nnot json\n{bad_span}\n{}\n", json!({"id": "named", "tokens": ["Ann", "married", "Bob"], "h": ["Ann", "Q1", [[0]]], "t": ["Bob", "Q2", [[2]]]})),
    )
    .unwrap();
    let output = dir.path().join("pred.jsonl");
    let out = run(&[
        "predict",
        "-c",
        s(&conf),
        "--input",
        s(&input),
        "--output",
        s(&output),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"));
    assert!(stderr(&out).contains("line 3"));
    let rows: Vec<Value> = fs::read_to_string(&output)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["instance_id"], "line-1");
    assert_eq!(rows[0]["words"].as_array().unwrap().len(), 3);
    assert!(rows[1]["error"].is_string());
    assert!(rows[2]["error"].is_string());
    assert_eq!(rows[3]["instance_id"], "named");

    fs::write(&input, format!("{good}\n")).unwrap();
    ok(&[
        "predict",
        "-c",
        s(&conf),
        "--input",
        s(&input),
        "--output",
        s(&output),
    ]);
}

#[test]
fn output_dir_variable_yields_to_the_flag() {
    let (dir, conf) = demo(40);
    let env_dir = dir.path().join("from-env");
    let out = reldisc(&["prepare", "-c", s(&conf)])
        .env("RELDISC_OUTPUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(env_dir.join("split.manifest").exists());
    assert!(!dir.path().join("run").exists());

    let flag_dir = dir.path().join("from-flag");
    let out = reldisc(&["prepare", "-c", s(&conf), "--output-dir", s(&flag_dir)])
        .env("RELDISC_OUTPUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(flag_dir.join("split.manifest").exists());
}

#[test]
fn training_is_deterministic() {
    let (dir, conf) = demo(40);
    ok(&["prepare", "-c", s(&conf)]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        ok(&["prepare", "-c", s(&conf), "--output-dir", s(d)]);
        ok(&[
            "train",
            "-c",
            s(&conf),
            "--output-dir",
            s(d),
            "--max-epochs",
            "2",
            "--warmup-epochs",
            "1",
        ]);
    }
    assert_eq!(
        fs::read(a.join("metrics.ndjson")).unwrap(),
        fs::read(b.join("metrics.ndjson")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("best.ckpt")).unwrap(),
        fs::read(b.join("best.ckpt")).unwrap()
    );
}
