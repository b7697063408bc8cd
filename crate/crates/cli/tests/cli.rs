use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dualview(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualview"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dualview(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_category(out: &Output) -> String {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().unwrap_or_default();
    let v: Value = serde_json::from_str(last).unwrap_or_else(|_| panic!("not JSON: {line}"));
    v["error"]["category"].as_str().unwrap().to_string()
}

const SMALL: &[&str] = &["--embed-dim", "8", "--hidden-dim", "8", "--batch-size", "8"];

fn prepared(dir: &Path) {
    ok(dir, &["synth", "--output", "c.jsonl", "--examples", "60", "--num-classes", "3", "--copy-rate", "0.3"]);
    let table = ok(
        dir,
        &["prep", "--input", "c.jsonl", "--output", "d.bin", "--num-classes", "3", "--sizes", "40,10,10", "--stats", "s.json"],
    );
    assert!(table.contains("avg_review_len"));
}

fn train(dir: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--dataset", "d.bin", "--output", "best.ckpt", "--last", "last.ckpt", "--log", "log.jsonl"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--max-steps", "4", "--checkpoint-interval", "2"]);
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepared(d);
    let stats: Value = serde_json::from_slice(&std::fs::read(d.join("s.json")).unwrap()).unwrap();
    assert_eq!(stats["train"], 40);

    train(d, &[]);
    let log = std::fs::read_to_string(d.join("log.jsonl")).unwrap();
    let entries: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 2);
    for key in ["lr", "seed", "disagreement_rate", "train", "valid"] {
        assert!(entries[0].get(key).is_some(), "{key}");
    }

    let report = ok(
        d,
        &["eval", "--checkpoint", "best.ckpt", "--dataset", "d.bin", "--beam-width", "2", "--max-depth", "6", "--json", "--predictions", "p.jsonl"],
    );
    let report: Value = serde_json::from_str(&report).unwrap();
    for key in ["rouge1", "rouge2", "rougeL", "source", "summary_tf", "summary_free", "merged", "disagreement_rate"] {
        assert!(report.get(key).is_some(), "{key}");
    }
    assert_eq!(report["examples"], 10);
    assert_eq!(std::fs::read_to_string(d.join("p.jsonl")).unwrap().lines().count(), 10);

    let multi = ok(
        d,
        &["eval", "--checkpoint", "best.ckpt", "--checkpoint", "last.ckpt", "--dataset", "d.bin", "--split", "valid", "--beam-width", "1", "--max-depth", "4", "--json"],
    );
    let multi: Value = serde_json::from_str(&multi).unwrap();
    assert_eq!(multi["aggregate"]["summary"]["rouge1.f1"]["n"], 2);

    std::fs::write(d.join("in.jsonl"), "{\"reviewText\": \"w1 t2 s0q1 overall s0q2\"}\n{\"id\": \"x\", \"reviewText\": \"t3 zz9q0\"}\n").unwrap();
    let preds = ok(d, &["predict", "--checkpoint", "best.ckpt", "--input", "in.jsonl", "--beam-width", "2", "--max-depth", "5"]);
    let preds: Vec<Value> = preds.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(preds.len(), 2);
    assert_eq!(preds[1]["id"], "x");
    for p in &preds {
        let label = p["predicted_label"].as_u64().unwrap();
        assert!((1..=3).contains(&label));
        assert!(p["generated_summary"].is_string() && p["log_prob"].is_f64());
    }
}

#[test]
fn resume_continues_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepared(d);
    train(d, &[]);
    let mut args = vec!["train", "--dataset", "d.bin", "--output", "best.ckpt", "--last", "last.ckpt", "--log", "log.jsonl"];
    args.extend_from_slice(&["--resume", "last.ckpt", "--max-steps", "6"]);
    let summary: Value = serde_json::from_str(ok(d, &args).trim()).unwrap();
    assert_eq!(summary["steps"], 6);
    let log = std::fs::read_to_string(d.join("log.jsonl")).unwrap();
    let steps: Vec<u64> = log.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["step"].as_u64().unwrap()).collect();
    assert_eq!(steps, [2, 4, 6]);

    let mut changed = args.clone();
    changed.extend_from_slice(&["--gamma4", "0.5"]);
    assert_eq!(error_category(&dualview(d, &changed)), "compatibility");
}

#[test]
fn config_files_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepared(d);
    std::fs::write(d.join("cfg.toml"), "lr = 0.05\ngamma4 = 0.3\nablations = \"-R\"\n").unwrap();
    train(d, &["--config", "cfg.toml", "--lr", "0.02"]);
    let log = std::fs::read_to_string(d.join("log.jsonl")).unwrap();
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["lr"], 0.02);

    std::fs::write(d.join("bad.toml"), "learning_rate = 0.1\n").unwrap();
    let out = dualview(d, &["train", "--dataset", "d.bin", "--output", "x.ckpt", "--config", "bad.toml"]);
    assert_eq!(error_category(&out), "config");
    assert!(!d.join("x.ckpt").exists());
}

#[test]
fn failures_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(error_category(&dualview(d, &["eval", "--checkpoint", "nope", "--dataset", "none"])), "io");
    assert_eq!(error_category(&dualview(d, &["frobnicate"])), "usage");
    assert_eq!(error_category(&dualview(d, &["prep", "--input", "x", "--output", "y", "--sizes", "1,2"])), "usage");

    std::fs::write(d.join("empty.jsonl"), "\n{\"broken\": \n").unwrap();
    let out = dualview(d, &["prep", "--input", "empty.jsonl", "--output", "d.bin"]);
    assert!(!out.status.success());
    assert!(!d.join("d.bin").exists());

    prepared(d);
    train(d, &[]);
    std::fs::write(d.join("in.jsonl"), "{\"reviewText\": \"w1 w2\"}\n").unwrap();
    let out = dualview(d, &["predict", "--checkpoint", "best.ckpt", "--input", "in.jsonl", "--teacher-forcing", "on"]);
    assert_eq!(error_category(&out), "contract");
    let out = dualview(d, &["--workers", "0", "synth", "--output", "z.jsonl"]);
    assert_eq!(error_category(&out), "config");
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepared(d);
    let run = |workers: &str, tag: &str| {
        let best = format!("{tag}.ckpt");
        let mut args = vec!["--workers", workers, "train", "--dataset", "d.bin", "--output", &best];
        args.extend_from_slice(SMALL);
        args.extend_from_slice(&["--max-steps", "3"]);
        ok(d, &args);
        std::fs::read(d.join(&best)).unwrap()
    };
    assert_eq!(run("1", "seq"), run("2", "par"));
}
