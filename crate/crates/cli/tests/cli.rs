use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vesselssl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vesselssl")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = vesselssl(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_corpus(root: &Path, seed: &str) -> String {
    ok(&["synth", "--out", s(root), "--preset", "tiny", "--seed", seed, "--n-labeled", "3", "--n-unlabeled", "3", "--n-test", "2"])
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(vesselssl(&["synth", "--seed", "1"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    // Presets need an explicit seed.
    assert_eq!(vesselssl(&["synth", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(vesselssl(&["train", "--preset", "huge", "--seed", "1", "--out", s(&out)]).status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[trainer]\nlearning_rate = 0.1\n").unwrap();
    let res = vesselssl(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("learning_rate"));
}

#[test]
fn missing_data_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let res = vesselssl(&["train", "--preset", "tiny", "--seed", "1", "--labeled", "/nonexistent", "--ablation", "supervised", "--out", s(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_corpus(&dir.path().join("a"), "7");
    let b = small_corpus(&dir.path().join("b"), "7");
    let c = small_corpus(&dir.path().join("c"), "8");
    assert!(a.starts_with("manifest "));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let stamp = json(&dir.path().join("a/synth.json"));
    assert_eq!(stamp["seed"], 7);
    assert!(stamp["config_hash"].as_str().is_some_and(|h| h.len() == 64));
    assert_eq!(std::fs::read_dir(dir.path().join("a/unlabeled/images")).unwrap().count(), 3);
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_corpus(&data, "3");
    let run = dir.path().join("run");
    ok(&["train", "--preset", "tiny", "--seed", "3", "--data", s(&data), "--ablation", "V", "--max-steps", "2", "--out", s(&run), "--quiet"]);
    for f in ["last.ckpt", "best.ckpt", "train_log.jsonl", "run.json", "config.toml"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    // Resuming continues the same log.
    ok(&["train", "--resume", s(&run.join("last.ckpt")), "--max-steps", "3", "--out", s(&run), "--quiet"]);
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    let steps: Vec<u64> = log.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["step"].as_u64().unwrap()).collect();
    assert_eq!(steps, [1, 2, 3]);

    let report_path = dir.path().join("report.json");
    let printed = ok(&["eval", "--checkpoint", s(&run.join("last.ckpt")), "--out", s(&report_path)]);
    assert!(printed.contains("DSC"));
    let report = json(&report_path);
    for key in ["miou", "dsc", "acc", "voi", "ari"] {
        assert!(report["aggregate"][key].is_number(), "{key}");
    }
    assert_eq!(report["seed"], 3);
    assert_eq!(report["images"].as_array().unwrap().len(), 2);
    assert_eq!(report["config_hash"], json(&run.join("run.json"))["config_hash"]);

    let img = data.join("test_target/images/test_target_000.png");
    let out = dir.path().join("pred");
    ok(&["predict", "--checkpoint", s(&run.join("best.ckpt")), "--input", s(&img), "--out-dir", s(&out)]);
    let mask = image::open(out.join("test_target_000_mask.png")).unwrap().to_luma8();
    assert!(mask.pixels().all(|p| p[0] == 0 || p[0] == 255));
    assert_eq!(mask.dimensions(), (64, 64));
    assert!(out.join("test_target_000_prob.png").exists());
    assert_eq!(json(&out.join("predictions.json"))["seed"], 3);
}

#[test]
fn classify_reports_table_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("staged");
    ok(&["synth", "--out", s(&data), "--preset", "tiny", "--seed", "2", "--staged", "4"]);
    let res = vesselssl(&["classify", "--data", s(&data), "--preset", "tiny", "--seed", "2", "--mode", "fusion"]);
    assert_eq!(res.status.code(), Some(2), "fusion without masks or a checkpoint is a usage error");

    let report = dir.path().join("cls.json");
    let env = [("VESSELSSL_DOWNSTREAM_EPOCHS", "2"), ("VESSELSSL_DOWNSTREAM_BASE_FILTERS", "4")];
    let out = Command::new(env!("CARGO_BIN_EXE_vesselssl"))
        .args(["classify", "--data", s(&data), "--preset", "tiny", "--seed", "2", "--mode", "image", "--out", s(&report)])
        .envs(env)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&report);
    for key in ["accuracy", "precision", "recall", "f1"] {
        let v = r[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert_eq!(r["n_test"], 4);
    assert_eq!(r["config"]["downstream"]["epochs"], 2);
}
