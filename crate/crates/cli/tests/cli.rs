use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn winforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_winforge"))
        .args(args)
        .env_remove("WINFORGE_OUT")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

fn run_config() -> Value {
    json!({
        "data": {
            "kind": { "kind": "teacher_net", "depth": 2, "width": 8, "init_seed": 3 },
            "dim": 3, "n_train": 64, "n_test": 32, "seed": 5
        },
        "thin": { "depth": 2, "width": 4, "dim": 3, "activation": "tanh" },
        "win": {
            "widen_factor": 4,
            "mode": "theory",
            "teacher_train": { "eta": 0.1, "steps": 20, "batch_size": 8, "width_scaled": true },
            "finetune": { "eta": 0.1, "steps": 10, "batch_size": 8, "width_scaled": true }
        },
        "evaluation": { "lipschitz": { "kind": "pairs", "data_pairs": 16, "local_dirs": 1 } }
    })
}

fn write_json(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    let out = winforge(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = winforge(&["win", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_is_a_usage_error_with_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = winforge(&["win", "--out", &s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
}

#[test]
fn invalid_config_is_a_job_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = run_config();
    cfg["win"]["widen_factor"] = json!(0);
    let path = write_json(tmp.path(), "cfg.json", &cfg);
    let out = winforge(&["win", "--config", &path, "--out", &s(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "invalid_config");
}

#[test]
fn gen_data_win_eval_scan_lipschitz_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = run_config();
    let gen = write_json(tmp.path(), "gen.json", &cfg["data"]);
    let cfg_path = write_json(tmp.path(), "cfg.json", &cfg);
    let data_dir = tmp.path().join("data");
    let run = tmp.path().join("run");

    let v = stdout_json(&winforge(&["gen-data", "--config", &gen, "--format", "wfd", "--out", &s(&data_dir)]));
    assert_eq!(v["train"], 64);
    assert!(data_dir.join("test.wfd").exists());

    let v = stdout_json(&winforge(&["win", "--config", &cfg_path, "--seed", "7", "--out", &s(&run)]));
    assert_eq!(v["M"], 16);
    for f in ["teacher.json", "warmed.json", "merged.json", "traces/teacher.csv", "traces/finetune.csv", "events.jsonl", "manifest.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let test = s(&data_dir.join("test.wfd"));
    let merged = s(&run.join("merged.json"));
    let teacher = s(&run.join("teacher.json"));
    let e = stdout_json(&winforge(&["eval", "--model", &merged, "--data", &test, "--against", &teacher]));
    assert!((e["discrepancy"].as_f64().unwrap() - v["win_d"].as_f64().unwrap()).abs() < 1e-12);
    assert!((e["rmse"].as_f64().unwrap() - v["win_rmse"].as_f64().unwrap()).abs() < 1e-12);

    let scan_dir = tmp.path().join("scan");
    let scan = stdout_json(&winforge(&[
        "hybrid-scan", "--teacher", &teacher, "--student", &merged, "--data", &test, "--out", &s(&scan_dir),
    ]));
    assert_eq!(scan["terms"].as_array().unwrap().len(), 2);
    assert!(scan_dir.join("scan.csv").exists());

    for est in ["pairs", "jacobian"] {
        let l = stdout_json(&winforge(&["lipschitz", "--model", &teacher, "--data", &test, "--estimator", est]));
        assert_eq!(l["estimator"], est);
        assert_eq!(l["estimates"].as_array().unwrap().last().unwrap().as_f64(), Some(1.0));
    }

    let ok = stdout_json(&winforge(&["verify", "--dir", &s(&run)]));
    assert_eq!(ok["ok"], true);
    std::fs::write(run.join("merged.json"), b"{}").unwrap();
    let bad = winforge(&["verify", "--dir", &s(&run)]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(stderr_json(&bad)["error"], "hash_mismatch");
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_json(tmp.path(), "cfg.json", &run_config());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        stdout_json(&winforge(&["win", "--config", &cfg_path, "--seed", "3", "--threads", "1", "--out", &s(dir)]));
    }
    for f in ["teacher.json", "merged.json", "result.json", "manifest.json", "events.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn env_var_overrides_out() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_json(tmp.path(), "cfg.json", &run_config());
    let env_dir = tmp.path().join("env");
    let flag_dir = tmp.path().join("flag");
    let out = Command::new(env!("CARGO_BIN_EXE_winforge"))
        .args(["train-teacher", "--config", &cfg_path, "--out", &s(&flag_dir)])
        .env("WINFORGE_OUT", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(env_dir.join("teacher.json").exists());
    assert!(!flag_dir.exists());
}

#[test]
fn scratch_defaults_to_the_matched_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_json(tmp.path(), "cfg.json", &run_config());
    let v = stdout_json(&winforge(&["scratch", "--config", &cfg_path, "--out", &s(&tmp.path().join("s"))]));
    assert_eq!(v["steps"], 30);
    assert!(tmp.path().join("s/scratch.json").exists());
}

#[test]
fn sweep_resumes_and_reports_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = json!({
        "master_seed": 4,
        "base": run_config(),
        "depths": [2],
        "widths": [4],
        "replicates": 2
    });
    let grid_path = write_json(tmp.path(), "grid.json", &grid);
    let out = s(&tmp.path().join("sweep"));
    let v = stdout_json(&winforge(&["sweep", "--config", &grid_path, "--out", &out]));
    assert_eq!((v["cells"].as_u64(), v["reused"].as_u64()), (Some(2), Some(0)));
    let v = stdout_json(&winforge(&["sweep", "--config", &grid_path, "--out", &out]));
    assert_eq!(v["reused"], 2);

    let mut broken = grid.clone();
    broken["base"]["win"]["teacher_train"]["eta"] = json!(1e300);
    let broken_path = write_json(tmp.path(), "broken.json", &broken);
    let out = winforge(&["sweep", "--config", &broken_path, "--out", &s(&tmp.path().join("broken"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "cells_failed");
    assert_eq!(err["summary"]["failed"].as_array().unwrap().len(), 2);
}
