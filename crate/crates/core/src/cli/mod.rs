//! Command-line front end. Every failure ends as one JSON line on stderr,
//! `{"error":"<kind>","message":"..."}`, and a nonzero exit code.

mod commands;
mod keys;
pub mod render;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{run_ablation, run_xi_sweep, train_run, AblationRow, RunSummary, SweepRow, ABLATION_VARIANTS};
pub use keys::{parse_ablation, KeyOverrides};

use crate::augment::{HeadAgg, DEFAULT_THETA};
use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "DAVT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "davt", version, about = "Vision transformer with hierarchical attention selection and attention-guided crops")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes config.json, metrics.csv and checkpoints to out_dir.
    Train {
        /// JSON config file; keys missing from it take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated switches, e.g. has=off,crop=off,fusion=cumulative.
        #[arg(long)]
        ablate: Option<String>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        keys: KeyOverrides,
    },
    /// Top-1 accuracy of a checkpoint on a manifest; writes eval.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Report path.
        #[arg(long, default_value = "eval.json")]
        out: PathBuf,
    },
    /// Write the synthetic fine-grained dataset as PPMs plus manifests.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Training images per class (manifest.csv).
        #[arg(long, default_value_t = 32)]
        per_class: usize,
        /// Held-out images per class (test_manifest.csv); 0 skips it.
        #[arg(long, default_value_t = 0)]
        test_per_class: usize,
        /// Image side, at least 32.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Per image: original, heatmap, crop, masked and token-box PPMs.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// PPM files to render.
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        /// Attention layer; defaults to the checkpoint's.
        #[arg(long)]
        xi: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: f64,
        #[arg(long, value_enum, default_value = "mean")]
        head_agg: HeadAggArg,
        #[arg(long, default_value = "visualize")]
        out: PathBuf,
    },
    /// Per image: raw map, normalized map, mask, bbox overlay and crop PPMs.
    AugmentPreview {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        xi: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: f64,
        #[arg(long, value_enum, default_value = "mean")]
        head_agg: HeadAggArg,
        #[arg(long, default_value = "preview")]
        out: PathBuf,
    },
    /// Train once per crop layer xi = 1..layers-1 and tabulate held-out Top-1.
    SweepXi {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        keys: KeyOverrides,
    },
    /// Train plain ViT, ViT+selection and the full model for each seed.
    Ablation {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        #[command(flatten)]
        keys: KeyOverrides,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum HeadAggArg {
    Mean,
    Max,
}

impl From<HeadAggArg> for HeadAgg {
    fn from(v: HeadAggArg) -> Self {
        match v {
            HeadAggArg::Mean => HeadAgg::Mean,
            HeadAggArg::Max => HeadAgg::Max,
        }
    }
}

/// Single-line error report.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Builds the global rayon pool from `DAVT_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return 2;
        }
    };
    match init_threads().and_then(|()| commands::dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            1
        }
    }
}
