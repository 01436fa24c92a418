//! The command-line pipeline: generate, train, track and evaluate.

use std::path::Path;
use std::process::{Command, Output};

fn gptrack(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gptrack")).args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = gptrack(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn generate_train_track_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen", "--out", "data", "--count", "2", "--frames", "8", "--seed", "3"], d);
    for f in ["frames.ndt", "masks.ndt", "gt_fields.ndt", "gt_lagrangian.ndt", "manifest.json"] {
        assert!(d.join("data/seq_000").join(f).is_file(), "{f}");
    }

    let train = ["train", "--data", "data", "--out", "run", "--seed", "1", "--epochs", "2"];
    ok(&train, d);
    let losses = std::fs::read_to_string(d.join("run/losses.csv")).unwrap();
    assert!(losses.starts_with("epoch,term_a,term_b,term_c,term_d,total"), "{losses}");
    assert_eq!(losses.lines().count(), 3);

    ok(&["train", "--data", "data", "--out", "again", "--seed", "1", "--epochs", "2"], d);
    assert_eq!(losses, std::fs::read_to_string(d.join("again/losses.csv")).unwrap());

    ok(&["track", "--ckpt", "run", "--seq", "data/seq_001", "--out", "tracked"], d);
    for f in ["steps.ndt", "lagrangian.ndt", "tracked_masks.ndt"] {
        assert!(d.join("tracked").join(f).is_file(), "{f}");
    }

    ok(&["eval", "--pred", "tracked", "--gt", "data/seq_001", "--report", "report.json", "--frames", "2,4"], d);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["frames"].as_array().unwrap().len(), 2);
    let dice = report["mean_dice"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&dice), "{dice}");
    let csv = std::fs::read_to_string(d.join("report.csv")).unwrap();
    let rows: Vec<_> = csv.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("seq_001,2,"), "{csv}");
}

#[test]
fn train_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = gptrack(&["train", "--data", "data", "--out", "run"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn oracle_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ok(&["gp-check", "--draws", "20"], dir.path()).contains("PASS"));
    let grads = ok(&["grad-check", "--per-input", "2"], dir.path());
    assert!(!grads.contains("FAIL"), "{grads}");
}
