//! End-to-end runs of the `socialpose` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_socialpose");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// A few seconds of training at most: tiny model, short session.
const SMALL: &[&str] = &[
    "scene.duration_frames=40",
    "model.embed_dim=8",
    "model.num_heads=2",
    "model.num_layers=1",
    "model.patch_size=32",
    "train.epochs=2",
    "train.batch_size=8",
    "train.noise_draws=2",
    "bench.warmup=1",
    "bench.min_frames=4",
];

fn run(args: &[&str], sets: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str], sets: &[&str]) -> String {
    let out = run(args, sets);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(run(&["synth", "--seed", "x"], &[]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--out", s(dir.path())], &["no.such_key=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.ckpt");
    std::fs::write(&bogus, b"not a checkpoint").unwrap();
    let out = run(
        &[
            "eval",
            "--out",
            s(dir.path()),
            "--ckpt",
            s(&bogus),
            "--data",
            s(dir.path()),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("nothing-here");
    let out = run(
        &["stats", "--out", s(dir.path()), "--data", s(&missing)],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn frozen_scene_has_zero_stats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let frozen = [
        "scene.duration_frames=30",
        "scene.amplitude_px=0",
        "scene.jitter_px=0",
    ];
    ok(&["synth", "--out", s(out), "--seed", "3"], &frozen);
    let text = ok(
        &[
            "stats",
            "--out",
            s(out),
            "--data",
            s(out),
            "--joint",
            "RWrist",
        ],
        &[],
    );
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[3..6], &["0.00000", "0.00000", "0.00000"], "{text}");
    assert!(out.join("stats.csv").is_file());
    assert!(out.join("manifest_synth.txt").is_file());
    assert!(out.join("manifest_stats.txt").is_file());
}

#[test]
fn untrained_model_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let sets: Vec<&str> = SMALL.iter().copied().chain(["train.epochs=0"]).collect();
    ok(&["synth", "--out", s(out)], &sets);
    ok(&["train", "--out", s(out), "--data", s(out)], &sets);
    let ckpt = out.join("model.ckpt");
    let text = ok(
        &[
            "eval",
            "--out",
            s(out),
            "--ckpt",
            s(&ckpt),
            "--data",
            s(out),
        ],
        &sets,
    );
    assert!(text.contains("mpjpe"), "{text}");
    let metrics = std::fs::read_to_string(out.join("eval_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn smoke_pipeline_emits_all_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = configs().join("smoke.cfg");
    let base = ["--config", s(&cfg), "--out", s(out)];
    let with = |extra: &[&str]| -> Vec<String> {
        base.iter().chain(extra).map(|a| a.to_string()).collect()
    };
    let call = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd.to_string()];
        args.extend(with(extra));
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&args, SMALL)
    };

    call("synth", &[]);
    for mode in ["raw", "plotted"] {
        assert!(out.join(mode).join("session.meta").is_file());
    }
    call("train", &["--data", s(out)]);
    let ckpt = out.join("model.ckpt");
    assert!(ckpt.is_file());
    let metrics = std::fs::read_to_string(out.join("train_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    call("eval", &["--ckpt", s(&ckpt), "--data", s(out)]);
    let text = call("bench", &["--ckpt", s(&ckpt), "--data", s(out)]);
    assert!(text.contains("rasterizations"), "{text}");
    for f in [
        "eval_metrics.csv",
        "bench_metrics.csv",
        "scatter_plotted.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    for cmd in ["synth", "train", "eval", "bench"] {
        let m = std::fs::read_to_string(out.join(format!("manifest_{cmd}.txt"))).unwrap();
        assert!(m.contains("sha256"), "{cmd} manifest lacks hashes");
        assert!(
            m.contains("config.train.epochs"),
            "{cmd} manifest lacks config echo"
        );
    }

    // Sampling is deterministic for a fixed seed.
    let obs = out.join("plotted").join("obs");
    let img = std::fs::read_dir(&obs)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "ppm"))
        .expect("exported observation image");
    let a = call(
        "sample",
        &["--ckpt", s(&ckpt), "--obs-file", s(&img), "--seed", "5"],
    );
    let b = call(
        "sample",
        &["--ckpt", s(&ckpt), "--obs-file", s(&img), "--seed", "5"],
    );
    assert_eq!(a, b);
    assert_eq!(a.trim().split(',').count(), 36);
}

#[test]
fn training_is_reproducible() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [d1.path(), d2.path()] {
        ok(&["synth", "--out", s(d)], SMALL);
        ok(&["train", "--out", s(d), "--data", s(d)], SMALL);
    }
    assert_eq!(
        std::fs::read(d1.path().join("model.ckpt")).unwrap(),
        std::fs::read(d2.path().join("model.ckpt")).unwrap()
    );
}
