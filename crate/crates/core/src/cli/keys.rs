//! One `--<key> <value>` flag per run-config key, generated from the
//! defaults so help text never drifts from them.

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use serde_json::Value;

use crate::config::RunConfig;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyOverrides(pub Vec<(String, String)>);

fn describe(key: &str) -> &'static str {
    match key {
        "image_size" => "input side length in pixels",
        "patch_size" => "patch side length in pixels",
        "hidden_dim" => "token width",
        "layers" => "encoder layers",
        "heads" => "attention heads, also tokens picked per layer",
        "mlp_dim" => "feed-forward width",
        "num_classes" => "output classes",
        "has" => "hierarchical token selection (on|off)",
        "fusion" => "attention fusion (pairwise|cumulative)",
        "lr0" => "initial learning rate",
        "momentum" => "SGD momentum",
        "batch_size" => "samples per step",
        "total_steps" => "optimiser steps",
        "theta_c" => "crop threshold in [0.4, 0.6]",
        "xi" => "attention layer guiding the crop (auto = mid-depth)",
        "head_agg" => "head aggregation for the crop map (mean|max)",
        "crop" => "attention-cropped branch (on|off)",
        "flip" => "random horizontal flips (on|off)",
        "seed" => "seed for init, batching and flips",
        "eval_interval" => "steps between evaluations, 0 = end only",
        "clip_norm" => "global gradient-norm ceiling, 0 = off",
        "checkpoint_interval" => "steps between checkpoints, 0 = final only",
        "train_manifest" => "training manifest CSV",
        "test_manifest" => "held-out manifest CSV",
        "out_dir" => "output directory",
        _ => "",
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Null => "auto".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn defaults() -> Vec<(String, Value)> {
    match serde_json::to_value(RunConfig::default()) {
        Ok(Value::Object(m)) => m.into_iter().collect(),
        _ => unreachable!("RunConfig serializes to an object"),
    }
}

impl Args for KeyOverrides {
    fn augment_args(mut cmd: Command) -> Command {
        for (key, value) in defaults() {
            let help = format!("{} [default: {}]", describe(&key), render(&value));
            cmd = cmd.arg(
                Arg::new(key.clone())
                    .long(key)
                    .value_name("VALUE")
                    .help(help)
                    .help_heading("Config keys"),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

impl FromArgMatches for KeyOverrides {
    fn from_arg_matches(matches: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = Vec::new();
        for (key, _) in defaults() {
            if let Some(v) = matches.get_one::<String>(&key) {
                out.push((key, v.clone()));
            }
        }
        Ok(Self(out))
    }

    fn update_from_arg_matches(&mut self, matches: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(matches)?;
        Ok(())
    }
}

/// `has=off,crop=off,fusion=cumulative` into key/value pairs.
pub fn parse_ablation(spec: &str) -> crate::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let Some((k, v)) = part.split_once('=') else {
            return Err(crate::Error::Config(format!("ablation flag {part:?} is not key=value")));
        };
        let k = k.trim();
        if !matches!(k, "has" | "crop" | "fusion" | "flip" | "xi" | "head_agg") {
            return Err(crate::Error::Config(format!("unknown ablation flag {k:?}")));
        }
        out.push((k.to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}
