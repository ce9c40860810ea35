//! Flat run configuration: one JSON object holding every knob of a run.
//! Keys absent from the file take their defaults; unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::augment::{default_xi, HeadAgg, DEFAULT_THETA};
use crate::backbone::ViTConfig;
use crate::error::{Error, Result};
use crate::has::FusionMode;
use crate::model::ModelOptions;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
    pub has: bool,
    pub fusion: FusionMode,
    pub lr0: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub theta_c: f64,
    /// `None` picks the mid-depth default for `layers`.
    pub xi: Option<usize>,
    pub head_agg: HeadAgg,
    pub crop: bool,
    pub flip: bool,
    /// Drives parameter init, batching and flips.
    pub seed: u64,
    pub eval_interval: usize,
    pub clip_norm: f64,
    /// Steps between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let vit = ViTConfig::default();
        let train = TrainConfig::default();
        let options = ModelOptions::default();
        Self {
            image_size: vit.image_size,
            patch_size: vit.patch_size,
            hidden_dim: vit.hidden_dim,
            layers: vit.layers,
            heads: vit.heads,
            mlp_dim: vit.mlp_dim,
            num_classes: vit.num_classes,
            has: options.has,
            fusion: options.fusion,
            lr0: train.lr0,
            momentum: train.momentum,
            batch_size: train.batch_size,
            total_steps: train.total_steps,
            theta_c: DEFAULT_THETA,
            xi: None,
            head_agg: train.head_agg,
            crop: train.crop,
            flip: train.flip,
            seed: train.seed,
            eval_interval: train.eval_interval,
            clip_norm: train.clip_norm,
            checkpoint_interval: 500,
            train_manifest: None,
            test_manifest: None,
            out_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    /// Every key, sorted.
    pub fn keys() -> Vec<String> {
        match serde_json::to_value(Self::default()) {
            Ok(Value::Object(m)) => m.keys().cloned().collect(),
            _ => unreachable!("RunConfig serializes to an object"),
        }
    }

    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let Value::Object(mut merged) = serde_json::to_value(Self::default())? else {
            unreachable!("RunConfig serializes to an object")
        };
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            merge_text(&mut merged, &text, path)?;
        }
        for (key, raw) in overrides {
            let value = parse_override(&merged, key, raw)?;
            merged.insert(key.clone(), value);
        }
        Self::finish(merged)
    }

    /// Defaults overlaid with a JSON object given as text.
    pub fn from_json(text: &str) -> Result<Self> {
        let Value::Object(mut merged) = serde_json::to_value(Self::default())? else {
            unreachable!("RunConfig serializes to an object")
        };
        merge_text(&mut merged, text, Path::new("<json>"))?;
        Self::finish(merged)
    }

    fn finish(merged: Map<String, Value>) -> Result<Self> {
        let config: Self = serde_json::from_value(Value::Object(merged))
            .map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn vit(&self) -> ViTConfig {
        ViTConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            heads: self.heads,
            mlp_dim: self.mlp_dim,
            num_classes: self.num_classes,
            seed: self.seed,
        }
    }

    pub fn options(&self) -> ModelOptions {
        ModelOptions {
            has: self.has,
            fusion: self.fusion,
        }
    }

    pub fn xi(&self) -> usize {
        self.xi.unwrap_or_else(|| default_xi(self.layers))
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            momentum: self.momentum,
            batch_size: self.batch_size,
            total_steps: self.total_steps,
            theta_c: self.theta_c,
            xi: self.xi(),
            head_agg: self.head_agg,
            crop: self.crop,
            flip: self.flip,
            seed: self.seed,
            eval_interval: self.eval_interval,
            clip_norm: self.clip_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vit().validate()?;
        self.train().validate(self.layers)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn merge(into: &mut Map<String, Value>, from: Map<String, Value>) -> Result<()> {
    for (k, v) in from {
        if !into.contains_key(&k) {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        into.insert(k, v);
    }
    Ok(())
}

/// Parses `raw` as JSON when the key is numeric, boolean or nullable, and as
/// a plain string otherwise. `on`/`off` are accepted for booleans.
fn merge_text(merged: &mut Map<String, Value>, text: &str, origin: &Path) -> Result<()> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Format {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(Error::Config(format!("{}: top level must be an object", origin.display())));
    };
    merge(merged, obj)
}

fn parse_override(current: &Map<String, Value>, key: &str, raw: &str) -> Result<Value> {
    let Some(existing) = current.get(key) else {
        return Err(Error::Config(format!("unknown key {key:?}")));
    };
    let bad = || Error::Config(format!("invalid value {raw:?} for {key}"));
    let nullable = matches!(key, "xi" | "train_manifest" | "test_manifest");
    if nullable && (raw == "null" || raw == "auto") {
        return Ok(Value::Null);
    }
    Ok(match existing {
        Value::Bool(_) => Value::Bool(match raw {
            "true" | "on" => true,
            "false" | "off" => false,
            _ => return Err(bad()),
        }),
        Value::Number(_) => serde_json::from_str::<serde_json::Number>(raw)
            .map(Value::Number)
            .map_err(|_| bad())?,
        Value::String(_) => Value::String(raw.to_owned()),
        // Unset nullable keys: `xi` takes a number, the manifests take paths.
        Value::Null => match serde_json::from_str::<serde_json::Number>(raw) {
            Ok(n) if key == "xi" => Value::Number(n),
            _ if key == "xi" => return Err(bad()),
            _ => Value::String(raw.to_owned()),
        },
        _ => return Err(bad()),
    })
}
