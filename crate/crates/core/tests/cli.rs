use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use davt::augment::{crop_resize, BBox};
use davt::config::RunConfig;
use davt::data::{encode_ppm, load_ppm};
use serde_json::Value;

fn davt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_davt"))
        .args(args)
        .env_remove("DAVT_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = davt(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code plus the single JSON error object on stderr.
fn fails(args: &[&str]) -> (i32, Value) {
    let out = davt(args);
    assert!(!out.status.success(), "{args:?} succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    let v: Value = serde_json::from_str(lines[0]).unwrap();
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
    (out.status.code().unwrap(), v)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, classes: usize, per_class: usize) -> PathBuf {
    let out = dir.join(format!("synth_{classes}_{per_class}"));
    ok(&[
        "synth",
        "--seed",
        "3",
        "--classes",
        &classes.to_string(),
        "--per-class",
        &per_class.to_string(),
        "--test-per-class",
        "2",
        "--size",
        "32",
        "--out",
        s(&out),
    ]);
    out
}

const TINY: [&str; 18] = [
    "--image_size",
    "32",
    "--hidden_dim",
    "16",
    "--layers",
    "3",
    "--heads",
    "2",
    "--mlp_dim",
    "32",
    "--num_classes",
    "3",
    "--batch_size",
    "2",
    "--total_steps",
    "6",
    "--eval_interval",
    "3",
];

fn train(data: &Path, out: &Path, extra: &[&str]) -> String {
    let manifest = data.join("manifest.csv");
    let test = data.join("test_manifest.csv");
    let mut args = vec![
        "train",
        "--train_manifest",
        s(&manifest),
        "--test_manifest",
        s(&test),
        "--out_dir",
        s(out),
    ];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn synth_is_deterministic_and_counts_images() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), 3, 4);
    let b = dir.path().join("again");
    ok(&[
        "synth", "--seed", "3", "--classes", "3", "--per-class", "4", "--test-per-class", "2", "--size", "32",
        "--out", s(&b),
    ]);
    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 12);
    assert_eq!(fs::read_to_string(a.join("test_manifest.csv")).unwrap().lines().count(), 1 + 6);
    assert_eq!(fs::read_to_string(a.join("classes.txt")).unwrap().lines().count(), 3);
    assert_eq!(manifest, fs::read_to_string(b.join("manifest.csv")).unwrap());
    for entry in fs::read_dir(a.join("images")).unwrap() {
        let p = entry.unwrap().path();
        assert_eq!(fs::read(&p).unwrap(), fs::read(b.join("images").join(p.file_name().unwrap())).unwrap());
    }
    let (code, err) = fails(&["synth", "--size", "16", "--out", s(&dir.path().join("small"))]);
    assert_eq!(code, 1);
    assert_eq!(err["error"], "config");
}

#[test]
fn train_writes_artifacts_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 3, 4);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let stdout = train(&data, &a, &["--checkpoint_interval", "2"]);
    assert!(stdout.starts_with("steps=6 "), "{stdout}");
    train(&data, &b, &["--checkpoint_interval", "2"]);

    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,lr,loss_v,loss_c,loss_total,eval_top1");
    assert_eq!(lines.len(), 7);
    assert!(lines[3].split(',').nth(5).is_some_and(|v| !v.is_empty()));
    assert!(lines[1].ends_with(','));
    assert_eq!(csv, fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(a.join("final.ckpt")).unwrap(), fs::read(b.join("final.ckpt")).unwrap());
    for step in [2, 4] {
        assert!(a.join(format!("checkpoints/step_{step:06}.ckpt")).exists());
    }
    let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg.total_steps, 6);
    assert_eq!(cfg.layers, 3);

    // Resuming from step 4 finishes with the same bytes as the unbroken run.
    let c = dir.path().join("c");
    let ck = a.join("checkpoints/step_000004.ckpt");
    train(&data, &c, &["--checkpoint_interval", "2", "--resume", s(&ck)]);
    assert_eq!(fs::read(a.join("final.ckpt")).unwrap(), fs::read(c.join("final.ckpt")).unwrap());
    assert_eq!(csv, fs::read_to_string(c.join("metrics.csv")).unwrap());
}

#[test]
fn eval_reports_top1_and_checks_classes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 3, 2);
    let run = dir.path().join("run");
    train(&data, &run, &[]);
    let report = dir.path().join("reports/eval.json");
    let ck = run.join("final.ckpt");
    let stdout = ok(&[
        "eval", "--checkpoint", s(&ck), "--manifest", s(&data.join("test_manifest.csv")), "--out", s(&report),
    ]);
    let top1: f64 = stdout.trim().strip_prefix("top1=").unwrap().parse().unwrap();
    let json: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["top1"].as_f64().unwrap(), top1);
    assert_eq!(json["total"], 6);
    assert_eq!(json["per_class"].as_array().unwrap().len(), 3);

    let other = synth(dir.path(), 4, 1);
    let (code, err) = fails(&["eval", "--checkpoint", s(&ck), "--manifest", s(&other.join("manifest.csv"))]);
    assert_eq!(code, 1);
    assert_eq!(err["error"], "config");

    let bad = dir.path().join("bad.ckpt");
    let mut bytes = fs::read(&ck).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&bad, bytes).unwrap();
    let (_, err) = fails(&["eval", "--checkpoint", s(&bad), "--manifest", s(&data.join("manifest.csv"))]);
    assert_eq!(err["error"], "checkpoint");
}

#[test]
fn visualize_and_preview_write_five_images_each() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 3, 2);
    let run = dir.path().join("run");
    train(&data, &run, &[]);
    let ck = run.join("final.ckpt");
    let image = data.join("images/c01_00000.ppm");

    let vis = dir.path().join("vis");
    ok(&["visualize", "--checkpoint", s(&ck), "--images", s(&image), "--out", s(&vis)]);
    for name in ["original", "heatmap", "crop", "masked", "tokens"] {
        let img = load_ppm(vis.join(format!("c01_00000_{name}.ppm"))).unwrap();
        assert_eq!((img.height(), img.width()), (32, 32), "{name}");
    }

    let pre = dir.path().join("pre");
    let stdout = ok(&[
        "augment-preview", "--checkpoint", s(&ck), "--images", s(&image), "--xi", "2", "--theta", "0.4",
        "--head-agg", "max", "--out", s(&pre),
    ]);
    for name in ["raw", "normalized", "mask", "bbox", "crop"] {
        assert!(pre.join(format!("c01_00000_{name}.ppm")).exists(), "{name}");
    }
    let nums: Vec<usize> = stdout
        .trim()
        .split_once("bbox=")
        .unwrap()
        .1
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    let bbox = BBox {
        row_min: nums[0],
        row_max: nums[1],
        col_min: nums[2],
        col_max: nums[3],
    };
    let expected = crop_resize(&load_ppm(&image).unwrap(), &bbox).unwrap();
    assert_eq!(fs::read(pre.join("c01_00000_crop.ppm")).unwrap(), encode_ppm(&expected));

    let (code, err) = fails(&["visualize", "--checkpoint", s(&ck), "--images", s(&image), "--xi", "3"]);
    assert_eq!(code, 1);
    assert_eq!(err["error"], "config");
}

#[test]
fn help_lists_every_key_with_its_default() {
    let help = ok(&["train", "--help"]);
    let defaults = serde_json::to_value(RunConfig::default()).unwrap();
    for key in RunConfig::keys() {
        let line = help
            .lines()
            .find(|l| l.trim_start().starts_with(&format!("--{key} ")))
            .unwrap_or_else(|| panic!("--{key} missing"));
        let shown = match &defaults[&key] {
            Value::Null => "auto".to_owned(),
            Value::String(v) => v.clone(),
            v => v.to_string(),
        };
        assert!(line.contains(&format!("[default: {shown}]")), "{line}");
    }
    assert!(help.contains("[default: 0.02]"));
    for sub in ["synth", "eval", "visualize", "augment-preview", "sweep-xi", "ablation"] {
        ok(&[sub, "--help"]);
    }
}

#[test]
fn failures_are_single_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = fails(&["train", "--no-such-flag", "1"]);
    assert_eq!((code, err["error"].as_str()), (2, Some("usage")));

    let (code, err) = fails(&["train"]);
    assert_eq!((code, err["error"].as_str()), (1, Some("config")));

    let (_, err) = fails(&["train", "--lr0", "fast"]);
    assert_eq!(err["error"], "config");

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"layers": 4, "warmup": 10}"#).unwrap();
    let (_, err) = fails(&["train", "--config", s(&cfg)]);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("warmup"));

    let (_, err) = fails(&["train", "--ablate", "lr0=1"]);
    assert_eq!(err["error"], "config");

    let (_, err) = fails(&["eval", "--checkpoint", "/nonexistent.ckpt", "--manifest", "m.csv"]);
    assert_eq!(err["error"], "io");

    let out = Command::new(env!("CARGO_BIN_EXE_davt"))
        .args(["synth", "--out", s(&dir.path().join("x"))])
        .env("DAVT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("DAVT_THREADS"));
}
