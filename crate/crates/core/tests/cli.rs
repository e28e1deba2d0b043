use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_priorground")).args(args).output().unwrap()
}

fn gen(dir: &Path) {
    let out = bin(&[
        "gen-data", "--out-dir", dir.to_str().unwrap(), "--n-images", "40", "--val-images", "10",
        "--test-images", "10", "--duplicate-rate", "0.5", "--seed", "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_and_bad_flags() {
    let help = bin(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let sub = bin(&["sweep", "--help"]);
    assert_eq!(sub.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&sub.stdout).contains("--omegas"));

    let bad = bin(&["eval", "--no-such-flag"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("Usage"));
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let m = |s: &str| data.join(format!("{s}.manifest.json")).to_str().unwrap().to_string();
    let run = tmp.path().join("run");

    let out = bin(&[
        "train", "--manifest", &m("train"), "--val-manifest", &m("val"), "--out-dir", run.to_str().unwrap(),
        "--epochs", "2", "--lr", "1e-3", "--optimizer", "adam", "--batch-size", "8",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run.join("checkpoint_best.bin");
    assert!(ckpt.exists() && run.join("train_log.jsonl").exists() && run.join("run_config.json").exists());
    let ckpt = ckpt.to_str().unwrap();

    let out = bin(&["eval", "--manifest", &m("test"), "--checkpoint", ckpt, "--omega", "0.3"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["config"]["omega"], 0.3);
    assert_eq!(report["report"]["scored"], 20);

    let out = bin(&["sweep", "--manifest", &m("test"), "--checkpoint", ckpt, "--omegas", "0,0.25,0.5,0.75,1"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(csv.lines().next().unwrap(), "omega,accuracy,pointing_accuracy");

    let table = tmp.path().join("ablation.csv");
    let out = bin(&["ablate", "--manifest", &m("test"), "--checkpoint", ckpt, "--out", table.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&table).unwrap().lines().count(), 6);
    assert!(tmp.path().join("ablation.csv.config.json").exists());

    let svg = tmp.path().join("o.svg");
    let out = bin(&[
        "ground", "--concept-only", "--manifest", &m("test"), "--sentence", "the dog on the left",
        "--dump-overlay", svg.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let g: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(g["phrases"].as_array().unwrap().len(), 1);
    assert_eq!(g["phrases"][0]["head"], "dog");
    assert!(g["phrases"][0]["box"].is_array());
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn validation_and_runtime_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let test = data.join("test.manifest.json");
    let test = test.to_str().unwrap();

    assert_eq!(bin(&["eval", "--manifest", test, "--omega", "1.5"]).status.code(), Some(1));
    // omega > 0 without a checkpoint cannot be swept
    assert_eq!(bin(&["sweep", "--manifest", test, "--omegas", "0,1"]).status.code(), Some(1));

    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"omega": 0.2, "unknown_key": true}"#).unwrap();
    assert_eq!(bin(&["eval", "--manifest", test, "--config", cfg.to_str().unwrap()]).status.code(), Some(1));

    let missing = tmp.path().join("nope.manifest.json");
    assert_eq!(bin(&["eval", "--manifest", missing.to_str().unwrap()]).status.code(), Some(2));

    let out = bin(&["eval", "--manifest", test, "--checkpoint", test]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let test = data.join("test.manifest.json");
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"omega": 0.0, "spatial_mask": false, "gt_mode": "any-box"}"#).unwrap();
    let out = bin(&["eval", "--manifest", test.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--gt-mode", "union"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["spatial_mask"], false);
    assert_eq!(v["config"]["gt_mode"], "union");
}
