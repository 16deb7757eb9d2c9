mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use sriqa::dataset::Manifest;
use sriqa::imaging::{read_image, write_image};
use sriqa::labeling::SubjectScores;
use sriqa::service::labeled_manifest_path;
use sriqa::trainer::load_model;

fn sriqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sriqa")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sriqa(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(sriqa(&["--help"]).status.code(), Some(0));
    assert_eq!(sriqa(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sriqa(&["predict"]).status.code(), Some(2));
    assert_eq!(sriqa(&["predict", "--model", "/nonexistent", "--hr", "/nonexistent"]).status.code(), Some(1));
}

#[test]
fn sr_bicubic_plugin_contract() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.ppm");
    let out = dir.path().join("out.ppm");
    write_image(&input, &common::gray(10, 7, 77)).unwrap();
    ok(&["sr-bicubic", "--in", s(&input), "--out", s(&out), "--width", "27", "--height", "19"]);
    let img = read_image(&out).unwrap();
    assert_eq!(img.dims(), (27, 19));
    assert!(img.pixels().iter().all(|&v| v == 77));
}

#[test]
fn build_label_train_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let sources = common::small_sources(&dir.path().join("originals"), 4, 128);
    let plan = json!({
        "sources": sources,
        "methods": [{ "name": "bicubic" }],
        "factors": [{ "factor": 2.0, "cap": 3 }],
    });
    let plan_path = dir.path().join("plan.json");
    std::fs::write(&plan_path, plan.to_string()).unwrap();
    let set = dir.path().join("set");
    let printed = ok(&["build-dataset", "--plan", s(&plan_path), "--out", s(&set)]);
    let manifest = set.join("manifest.jsonl");
    assert_eq!(printed.trim(), s(&manifest));
    let first = std::fs::read(&manifest).unwrap();
    ok(&["build-dataset", "--plan", s(&plan_path), "--out", s(&set)]);
    assert_eq!(std::fs::read(&manifest).unwrap(), first);

    // Five raters score every anchor image.
    let m = Manifest::load(&manifest).unwrap();
    let anchors: Vec<&str> = m.records.iter().filter(|r| r.iteration == 2).map(|r| r.sample_id.as_str()).collect();
    let scores: Vec<SubjectScores> = (0..5)
        .map(|i| SubjectScores {
            subject_id: format!("r{i}"),
            scores: anchors.iter().enumerate().map(|(k, a)| (a.to_string(), 4.0 + k as f64 + 0.1 * i as f64)).collect(),
        })
        .collect();
    let scores_path = dir.path().join("scores.json");
    std::fs::write(&scores_path, serde_json::to_vec(&scores).unwrap()).unwrap();
    let report: Value = serde_json::from_str(&ok(&["label", "--scores", s(&scores_path), "--manifest", s(&manifest)])).unwrap();
    assert_eq!(report["curves"].as_array().unwrap().len(), 4);
    let labeled = labeled_manifest_path(&manifest);
    let once = std::fs::read(&labeled).unwrap();
    ok(&["label", "--scores", s(&scores_path), "--manifest", s(&manifest)]);
    assert_eq!(std::fs::read(&labeled).unwrap(), once);

    let cfg = json!({
        "model": { "width_c": 8, "head_units": [16, 8, 1] },
        "train": { "max_steps": 3, "batch_size": 2, "seed": 1 },
        "split_ratio": 0.5,
    });
    let cfg_path = dir.path().join("train.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let summary: Value = serde_json::from_str(&ok(&[
        "train", "--manifest", s(&labeled), "--config", s(&cfg_path), "--out", s(&ckpt),
    ]))
    .unwrap();
    assert_eq!(summary["steps"], json!(3));
    // The checkpoint log carries wall-clock time, so compare parameters.
    let first_model = load_model(&ckpt).unwrap();
    ok(&["train", "--manifest", s(&labeled), "--config", s(&cfg_path), "--out", s(&ckpt)]);
    assert_eq!(load_model(&ckpt).unwrap(), first_model);

    let r = &m.records[0];
    let hr = m.resolve(&r.hr_path);
    let lr = m.resolve(&r.lr_path);
    let p1 = ok(&["predict", "--model", s(&ckpt), "--hr", s(&hr), "--lr", s(&lr)]);
    let p2 = ok(&["predict", "--model", s(&ckpt), "--hr", s(&hr), "--lr", s(&lr)]);
    assert_eq!(p1, p2);
    assert!(p1.trim().parse::<f64>().unwrap().is_finite());
    assert_eq!(sriqa(&["predict", "--model", s(&ckpt), "--hr", s(&hr)]).status.code(), Some(1));

    let eval: Value = serde_json::from_str(&ok(&[
        "evaluate", "--manifest", s(&labeled), "--model", s(&ckpt), "--group-by", "content", "--feature-distance",
    ]))
    .unwrap();
    assert_eq!(eval["predictions"].as_array().unwrap().len(), 12);
    assert!(eval["feature_distance"]["samples"].is_array());
    assert!(eval["report"]["groups"].is_array());
}

#[test]
fn gradcheck_and_selftest_pass() {
    let out = ok(&["gradcheck"]);
    assert!(out.contains("max relative error"));
    let out = ok(&["selftest"]);
    assert!(!out.contains("FAIL"), "{out}");
}
