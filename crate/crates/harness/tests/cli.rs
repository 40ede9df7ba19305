use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn speckle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speckle")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn small_reconstruct(dir: &Path, extra: &[&str]) -> Output {
    let out_dir = format!("out_dir={}", dir.display());
    let mut args = vec![
        "reconstruct",
        "--set",
        "size=16",
        "--set",
        "patch_sizes=8,16",
        "--set",
        "budgets=20,20",
        "--set",
        "channels=16",
        "--set",
        "outer_iters=10",
        "--set",
        "L=10",
        "--set",
        &out_dir,
    ];
    args.extend_from_slice(extra);
    speckle(&args)
}

#[test]
fn missing_scene_is_a_one_line_config_error() {
    let out = speckle(&["reconstruct", "--set", "scene=/definitely/not/here.png"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]:"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    for set in ["bogus=1", "m_over_n=abc", "sensing=fourier"] {
        let out = speckle(&["simulate", "--set", set]);
        assert!(!out.status.success(), "{set}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]:"));
    }
}

#[test]
fn config_file_must_match_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "experiment = threshold-study\ntrials = 3\n").unwrap();
    let out = speckle(&["reconstruct", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn small_reconstruct_improves_on_initial_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let report = json(&small_reconstruct(dir.path(), &[]));
    let initial = report["initial"]["psnr"].as_f64().unwrap();
    let fin = report["final"]["psnr"].as_f64().unwrap();
    assert!(fin > initial, "final {fin} vs initial {initial}");
    for file in ["estimate.png", "estimate.f64", "trace.csv", "report.json"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(doc["config"]["size"], 16);

    let metrics = json(&speckle(&[
        "metrics",
        "--estimate",
        dir.path().join("estimate.png").to_str().unwrap(),
        "--reference",
        dir.path().join("estimate.png").to_str().unwrap(),
    ]));
    assert_eq!(metrics["mse"], 0.0);
    assert!((metrics["ssim"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn reruns_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = json(&small_reconstruct(a.path(), &[]));
    let rb = json(&small_reconstruct(b.path(), &[]));
    assert_eq!(ra["final"], rb["final"]);
    assert_eq!(
        std::fs::read(a.path().join("estimate.f64")).unwrap(),
        std::fs::read(b.path().join("estimate.f64")).unwrap()
    );
}

#[test]
fn identity_sensing_at_full_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let report = json(&small_reconstruct(dir.path(), &["--set", "sensing=identity", "--set", "m_over_n=1"]));
    assert_eq!(report["m"], report["n"]);
    assert!(report["final"]["psnr"].as_f64().unwrap().is_finite());
    assert_eq!(std::fs::read(dir.path().join("estimate.f64")).unwrap().len(), 256 * 8);

    let out = small_reconstruct(dir.path(), &["--set", "sensing=identity", "--set", "m_over_n=0.5"]);
    assert!(!out.status.success());
}

#[test]
fn simulate_then_reconstruct_from_saved_looks() {
    let dir = tempfile::tempdir().unwrap();
    let sim_dir = dir.path().join("sim");
    json(&speckle(&[
        "simulate",
        "--set",
        "size=16",
        "--set",
        "L=5",
        "--set",
        &format!("out_dir={}", sim_dir.display()),
    ]));
    let ensemble = sim_dir.join("ensemble.bin");
    assert!(ensemble.exists());
    let rec = dir.path().join("rec");
    let report = json(&small_reconstruct(&rec, &["--set", &format!("ensemble={}", ensemble.display())]));
    assert_eq!(report["looks"], 5);
    assert_eq!(report["n"], 256);
}
