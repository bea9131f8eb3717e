use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ego(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ego3dpose"))
        .args(args)
        .env_remove("EGO3DPOSE_CONFIG")
        .env_remove("EGO3DPOSE_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON error in {text}"));
    serde_json::from_str(line).unwrap()
}

#[test]
fn prints_presets_as_valid_config() {
    for preset in ["toy", "full"] {
        let out = ego(&["config", "--preset", preset]);
        assert!(out.status.success());
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(v["model"]["heatmap_size"].is_u64());
        assert!(v["stage2"]["optimizer"]["kind"].is_string());
    }
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(ego(&["generate", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(ego(&["train", "--stage", "3"]).status.code(), Some(2));
}

#[test]
fn missing_config_is_reported_as_json() {
    let out = ego(&["generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1}"#).unwrap();
    let out = ego(&["--config", bad.to_str().unwrap(), "generate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "config");

    let out = ego(&["--config", dir.path().join("absent.json").to_str().unwrap(), "generate"]);
    assert_eq!(error_json(&out)["error"]["kind"], "io");
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let out = ego(&["config", "--preset", "toy", "--out", dir.join("run").to_str().unwrap()]);
    let mut v: Value = serde_json::from_slice(&out.stdout).unwrap();
    v["dataset"]["n_train"] = 4.into();
    v["dataset"]["n_test"] = 2.into();
    for stage in ["stage1", "stage2"] {
        v[stage]["batch_size"] = 4.into();
        v[stage]["max_steps"] = 1.into();
    }
    let path = dir.join("cfg.json");
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let ok = |args: &[&str]| {
        let out = ego(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(&["--config", cfg, "generate"]);
    let run = dir.path().join("run");
    assert!(run.join("dataset/manifest.json").exists());

    // Stage 2 before stage 1 has nothing to start from.
    let early = ego(&["--config", cfg, "train", "--stage", "2"]);
    assert_eq!(early.status.code(), Some(1));

    ok(&["--config", cfg, "train", "--stage", "1"]);
    ok(&["--config", cfg, "train", "--stage", "2"]);
    assert!(run.join("run_config.json").exists());

    let out = ok(&["--config", cfg, "eval"]);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["n_samples"], 2);
    assert!(summary["mpjpe_mm"].as_f64().unwrap() > 0.0);
    assert!(run.join("eval_b_ph_sm/report.json").exists());

    let sample = run.join("dataset/samples").read_dir().unwrap().next().unwrap().unwrap().path();
    let dump = dir.path().join("dump");
    let sample = sample.to_str().unwrap();
    ok(&["--out", dump.to_str().unwrap(), "inspect", "--sample", sample]);
    assert!(dump.join("left.png").exists() && dump.join("peh_gt.png").exists());
    assert!(!dump.join("pose.json").exists());
    let ck = run.join("stage2_b_ph_sm.safetensors");
    ok(&["--config", cfg, "--out", dump.to_str().unwrap(), "inspect", "--sample", sample, "--checkpoint", ck.to_str().unwrap()]);
    let pose: Value = serde_json::from_slice(&std::fs::read(dump.join("pose.json")).unwrap()).unwrap();
    assert!(pose["mpjpe_mm"].as_f64().unwrap().is_finite());
}
