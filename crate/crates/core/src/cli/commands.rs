use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::render::{augment_preview, visualize};
use super::{parse_ablation, Command, KeyOverrides};
use crate::augment::{CropSettings, HeadAgg};
use crate::config::RunConfig;
use crate::data::{load_dataset, load_ppm, save_ppm, synth_finegrained, write_dataset, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::train::{
    evaluate, load_checkpoint, save_checkpoint, write_metrics_csv, Checkpoint, EvalReport, Trainer,
};

pub(super) fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            ablate,
            resume,
            keys,
        } => {
            let cfg = resolve(config.as_deref(), keys, ablate.as_deref())?;
            let summary = train_run(&cfg, resume.as_deref())?;
            println!(
                "steps={} loss_total={} top1={}",
                summary.steps,
                summary.loss_total,
                summary.top1.map(|v| v.to_string()).unwrap_or_default()
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
        } => cmd_eval(&checkpoint, &manifest, &out),
        Command::Synth {
            seed,
            classes,
            per_class,
            test_per_class,
            size,
            out,
        } => cmd_synth(seed, classes, per_class, test_per_class, size, &out),
        Command::Visualize {
            checkpoint,
            images,
            xi,
            theta,
            head_agg,
            out,
        } => cmd_render(&checkpoint, &images, xi, theta, head_agg.into(), &out, false),
        Command::AugmentPreview {
            checkpoint,
            images,
            xi,
            theta,
            head_agg,
            out,
        } => cmd_render(&checkpoint, &images, xi, theta, head_agg.into(), &out, true),
        Command::SweepXi { config, keys } => {
            let cfg = resolve(config.as_deref(), keys, None)?;
            let rows = run_xi_sweep(&cfg)?;
            println!("xi\ttop1");
            for r in rows {
                println!("{}\t{}", r.xi, r.top1);
            }
            Ok(())
        }
        Command::Ablation { config, seeds, keys } => {
            let cfg = resolve(config.as_deref(), keys, None)?;
            let seeds = seeds
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::Config(format!("bad seed {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = run_ablation(&cfg, &seeds)?;
            println!("variant\tseed\ttop1");
            for r in rows {
                println!("{}\t{}\t{}", r.variant, r.seed, r.top1);
            }
            Ok(())
        }
    }
}

fn resolve(file: Option<&Path>, keys: KeyOverrides, ablate: Option<&str>) -> Result<RunConfig> {
    let mut overrides = keys.0;
    if let Some(spec) = ablate {
        overrides.extend(parse_ablation(spec)?);
    }
    RunConfig::resolve(file, &overrides)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_for(cfg: &RunConfig, manifest: &Path) -> Result<Dataset> {
    let data = load_dataset(manifest, cfg.image_size)?;
    if data.num_classes() != cfg.num_classes {
        return Err(Error::Config(format!(
            "{} lists {} classes but num_classes is {}",
            manifest.display(),
            data.num_classes(),
            cfg.num_classes
        )));
    }
    Ok(data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub loss_total: f64,
    /// Last evaluation (held-out split when configured, else training).
    pub top1: Option<f64>,
    pub out_dir: PathBuf,
}

/// The `train` command minus argument parsing. Writes `config.json`,
/// `metrics.csv`, `checkpoints/step_XXXXXX.ckpt` and `final.ckpt`.
pub fn train_run(cfg: &RunConfig, resume: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    let manifest = cfg
        .train_manifest
        .as_deref()
        .ok_or_else(|| Error::Config("train_manifest is required for training".into()))?;
    let train = load_for(cfg, manifest)?;
    let test = cfg.test_manifest.as_deref().map(|m| load_for(cfg, m)).transpose()?;

    let mut trainer = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            check_resume(&ck, cfg)?;
            Trainer::from_checkpoint(ck)?
        }
        None => Trainer::new(crate::model::Davt::new(cfg.vit(), cfg.options())?, cfg.train())?,
    };

    let out = cfg.out_dir.clone();
    let ck_dir = out.join("checkpoints");
    create_dir(&ck_dir)?;
    write_text(&out.join("config.json"), &(cfg.to_json()? + "\n"))?;

    let interval = cfg.checkpoint_interval;
    let total = cfg.total_steps;
    trainer.run(&train, test.as_ref(), |t| {
        let step = t.step();
        if interval > 0 && step % interval == 0 && step < total {
            save_checkpoint(ck_dir.join(format!("step_{step:06}.ckpt")), &t.checkpoint())?;
            write_metrics_csv(out.join("metrics.csv"), &t.history)?;
        }
        Ok(())
    })?;
    save_checkpoint(out.join("final.ckpt"), &trainer.checkpoint())?;
    write_metrics_csv(out.join("metrics.csv"), &trainer.history)?;

    let last = trainer.history.last().expect("at least one step");
    Ok(RunSummary {
        steps: trainer.step(),
        loss_total: last.loss_total,
        top1: trainer.history.iter().rev().find_map(|r| r.eval_top1),
        out_dir: out,
    })
}

fn check_resume(ck: &Checkpoint, cfg: &RunConfig) -> Result<()> {
    let mismatch = |what: &str| Error::Checkpoint(format!("resume: checkpoint {what} differs from the config"));
    if ck.vit != cfg.vit() {
        return Err(mismatch("model shape"));
    }
    if ck.options != cfg.options() {
        return Err(mismatch("model options"));
    }
    if ck.train != cfg.train() {
        return Err(mismatch("training settings"));
    }
    Ok(())
}

#[derive(Serialize)]
struct ClassAccuracy<'a> {
    class: &'a str,
    top1: Option<f64>,
}

#[derive(Serialize)]
struct EvalJson<'a> {
    top1: f64,
    correct: usize,
    total: usize,
    per_class: Vec<ClassAccuracy<'a>>,
}

fn eval_json(report: &EvalReport, classes: &[String]) -> Result<String> {
    let per_class = classes
        .iter()
        .zip(&report.per_class)
        .map(|(c, &a)| ClassAccuracy { class: c, top1: a })
        .collect();
    Ok(serde_json::to_string_pretty(&EvalJson {
        top1: report.top1,
        correct: report.correct,
        total: report.total,
        per_class,
    })? + "\n")
}

fn cmd_eval(checkpoint: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let model = ck.model();
    let data = load_dataset(manifest, model.config.image_size)?;
    if data.num_classes() != model.config.num_classes {
        return Err(Error::Config(format!(
            "checkpoint has {} classes but {} lists {}",
            model.config.num_classes,
            manifest.display(),
            data.num_classes()
        )));
    }
    let report = evaluate(&model, &data)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_text(out, &eval_json(&report, &data.classes)?)?;
    println!("top1={}", report.top1);
    Ok(())
}

fn cmd_synth(seed: u64, classes: usize, per_class: usize, test_per_class: usize, size: usize, out: &Path) -> Result<()> {
    let all = synth_finegrained(SynthSpec {
        seed,
        num_classes: classes,
        per_class: per_class + test_per_class,
        size,
    })?;
    // Classes are interleaved, so the first per_class·classes samples hold
    // exactly per_class images of every class.
    let split = per_class * classes;
    let mut train = all.dataset.clone();
    let test_samples = train.samples.split_off(split);
    create_dir(out)?;
    write_dataset(&train, out, "images", "manifest.csv")?;
    if test_per_class > 0 {
        let test = Dataset {
            samples: test_samples,
            classes: train.classes.clone(),
        };
        write_dataset(&test, out, "test_images", "test_manifest.csv")?;
    }
    println!("wrote {} training and {} held-out images to {}", split, all.dataset.len() - split, out.display());
    Ok(())
}

fn cmd_render(
    checkpoint: &Path,
    images: &[PathBuf],
    xi: Option<usize>,
    theta: f64,
    head_agg: HeadAgg,
    out: &Path,
    preview: bool,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let model = ck.model();
    let settings = CropSettings {
        xi: xi.unwrap_or(ck.train.xi),
        theta,
        head_agg,
    };
    let mut check = ck.train.clone();
    check.xi = settings.xi;
    check.theta_c = theta;
    check.validate(model.config.layers)?;
    create_dir(out)?;
    for path in images {
        let mut image = load_ppm(path)?;
        let side = model.config.image_size;
        if image.height() != side || image.width() != side {
            image = image.resize(side, side)?;
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        let (named, bbox) = if preview {
            let p = augment_preview(&model, &image, &settings)?;
            (p.named().map(|(n, i)| (n, i.clone())), p.plan.bbox)
        } else {
            let v = visualize(&model, &image, &settings)?;
            (v.named().map(|(n, i)| (n, i.clone())), v.plan.bbox)
        };
        for (name, img) in named {
            save_ppm(&img, out.join(format!("{stem}_{name}.ppm")))?;
        }
        println!(
            "{stem} bbox={},{},{},{}",
            bbox.row_min, bbox.row_max, bbox.col_min, bbox.col_max
        );
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub xi: usize,
    pub top1: f64,
}

/// One training run per `xi` in `1..layers`, each under `out_dir/xi_<k>`;
/// writes `out_dir/xi_sweep.csv`.
pub fn run_xi_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for xi in 1..cfg.layers {
        let run = RunConfig {
            xi: Some(xi),
            out_dir: cfg.out_dir.join(format!("xi_{xi}")),
            ..cfg.clone()
        };
        let summary = train_run(&run, None)?;
        rows.push(SweepRow {
            xi,
            top1: summary.top1.unwrap_or(f64::NAN),
        });
    }
    let mut csv = String::from("xi,top1\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{}", r.xi, r.top1);
    }
    write_text(&cfg.out_dir.join("xi_sweep.csv"), &csv)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub top1: f64,
}

pub const ABLATION_VARIANTS: [(&str, bool, bool); 3] =
    [("vit", false, false), ("vit+has", true, false), ("davt", true, true)];

/// Every variant for every seed; writes `out_dir/ablation.csv` with one row
/// per run followed by per-variant means (`seed` column `mean`).
pub fn run_ablation(cfg: &RunConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &(variant, has, crop) in &ABLATION_VARIANTS {
        for &seed in seeds {
            let run = RunConfig {
                has,
                crop,
                seed,
                out_dir: cfg.out_dir.join(format!("{variant}_seed{seed}")),
                ..cfg.clone()
            };
            let summary = train_run(&run, None)?;
            rows.push(AblationRow {
                variant,
                seed,
                top1: summary.top1.unwrap_or(f64::NAN),
            });
        }
    }
    let mut csv = String::from("variant,seed,top1\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.variant, r.seed, r.top1);
    }
    for &(variant, _, _) in &ABLATION_VARIANTS {
        let v: Vec<f64> = rows.iter().filter(|r| r.variant == variant).map(|r| r.top1).collect();
        let _ = writeln!(csv, "{variant},mean,{}", v.iter().sum::<f64>() / v.len() as f64);
    }
    write_text(&cfg.out_dir.join("ablation.csv"), &csv)?;
    Ok(rows)
}
