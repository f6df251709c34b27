use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sixthsense::checkpoint;
use sixthsense::commands::{self, TickDetections};
use sixthsense::episode_io::EpisodeWriter;
use sixthsense::report;
use sixthsense_core::dataset::EpisodeHeader;
use sixthsense_core::detection::{ray_distance, DEFAULT_WINDOW_DEG};
use sixthsense_core::lidar::BINS;
use sixthsense_core::simulator::WorldConfig;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sixthsense")).args(args).env("SIXTHSENSE_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(out: &Path, env: &str, seconds: &str, seed: &str) -> PathBuf {
    ok(&["simulate", "--env-name", env, "--duration", seconds, "--seed", seed, "--out", s(out)]);
    out.join(format!("{env}_{seed}.jsonl"))
}

/// Short episodes of all three split environments.
fn data_dir(root: &Path) -> PathBuf {
    let dir = root.join("data");
    for env in ["corridor", "break_area", "lab"] {
        simulate(&dir, env, "8", "3");
    }
    dir
}

#[test]
fn simulate_is_deterministic_and_ticks_at_10_hz() {
    let t = tempfile::tempdir().unwrap();
    let a = simulate(&t.path().join("a"), "lab", "600", "1");
    let b = simulate(&t.path().join("b"), "lab", "600", "1");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(t.path().join("a/lab_1.manifest.json").is_file());
    assert_eq!(commands::prepare_file(&a).unwrap().frames.len(), 6000);
}

#[test]
fn simulate_rejects_zero_duration() {
    let t = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--duration", "0", "--out", s(t.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--duration"));
}

#[test]
fn simulate_rejects_unknown_environment() {
    let t = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--env-name", "moon", "--duration", "1", "--out", s(t.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("moon"));
}

#[test]
fn train_with_zero_lr_keeps_the_initialization() {
    let t = tempfile::tempdir().unwrap();
    let data = data_dir(t.path());
    let out = t.path().join("model");
    ok(&["train", "--data-dir", s(&data), "--history", "1", "--epochs", "1", "--lr", "0", "--seed", "4", "--out", s(&out)]);
    let (params, meta) = checkpoint::load(&out.join("model.ckpt")).unwrap();
    assert_eq!(meta.label, "no_history");
    assert_eq!(params, commands::initial_params(1, 4).unwrap());
    assert!(out.join("training_log.csv").is_file());
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn train_fails_on_missing_data_dir() {
    let t = tempfile::tempdir().unwrap();
    let out = run(&["train", "--data-dir", s(&t.path().join("nowhere")), "--out", s(&t.path().join("m"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn eval_writes_metrics_with_dummy_row_and_plots() {
    let t = tempfile::tempdir().unwrap();
    let data = data_dir(t.path());
    let model = t.path().join("model");
    ok(&["train", "--data-dir", s(&data), "--history", "30", "--epochs", "1", "--samples-per-epoch", "32", "--out", s(&model)]);
    let eval = t.path().join("eval");
    let ckpt = model.join("model.ckpt");
    ok(&["eval", "--model", s(&ckpt), "--test-data", s(&data), "--out", s(&eval)]);
    let m = report::read_metrics(&eval.join("metrics.json")).unwrap();
    assert_eq!(m.models.len(), 1);
    assert_eq!(m.models[0].name, "history");
    assert!(m.dummy.e_o.is_finite() && m.dummy.e_d.is_finite());
    for f in ["pr_curve.csv", "pr_curve.svg", "orientation_errors.csv", "orientation_error_hist.svg", "manifest.json"] {
        assert!(eval.join(f).is_file(), "{f}");
    }
    let plots = t.path().join("plots");
    ok(&["plot", "--eval-dir", s(&eval), "--out", s(&plots)]);
    assert!(plots.join("pr_curve.svg").is_file());

    for bad in ["0", "1", "1.5", "-0.2"] {
        let out = run(&["eval", "--model", s(&ckpt), "--test-data", s(&data), "--threshold", bad, "--out", s(&eval)]);
        assert_eq!(out.status.code(), Some(2), "threshold {bad}");
    }
}

fn read_detections(path: &Path) -> Vec<TickDetections> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn infer_is_deterministic_and_respects_nms_spacing() {
    let t = tempfile::tempdir().unwrap();
    let ep = simulate(&t.path().join("ep"), "lab", "5", "9");
    let ckpt = t.path().join("init.ckpt");
    commands::save_checkpoint(&ckpt, &commands::initial_params(2, 1).unwrap(), "history", 1, 0, None).unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = t.path().join(format!("det{k}"));
        ok(&["infer", "--model", s(&ckpt), "--episode", s(&ep), "--threshold", "0.05", "--out", s(&out)]);
        outputs.push(std::fs::read(out.join("lab_9.detections.jsonl")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let ticks = read_detections(&t.path().join("det0/lab_9.detections.jsonl"));
    assert_eq!(ticks.len(), 49);
    assert!(ticks.iter().any(|t| !t.detections.is_empty()));
    for tick in &ticks {
        for (i, a) in tick.detections.iter().enumerate() {
            assert!(a.confidence >= 0.05);
            for b in &tick.detections[i + 1..] {
                assert!(ray_distance(a.ray, b.ray, BINS) > DEFAULT_WINDOW_DEG);
            }
        }
    }
}

#[test]
fn infer_on_empty_episode_writes_nothing() {
    let t = tempfile::tempdir().unwrap();
    let ep = t.path().join("empty.jsonl");
    let world = WorldConfig::preset("lab", 1).unwrap();
    EpisodeWriter::create(&ep, &EpisodeHeader::new("lab", &world, 0.0)).unwrap().finish().unwrap();
    let ckpt = t.path().join("init.ckpt");
    commands::save_checkpoint(&ckpt, &commands::initial_params(1, 1).unwrap(), "no_history", 1, 0, None).unwrap();
    let out = t.path().join("det");
    ok(&["infer", "--model", s(&ckpt), "--episode", s(&ep), "--out", s(&out)]);
    assert_eq!(std::fs::read(out.join("empty.detections.jsonl")).unwrap(), b"");
}
