use serde::{Deserialize, Serialize};

use crate::augment::{check_theta, CropSettings, HeadAgg, DEFAULT_THETA};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub theta_c: f64,
    /// Attention layer (1-based) that guides the crop.
    pub xi: usize,
    pub head_agg: HeadAgg,
    /// Cropped branch on/off.
    pub crop: bool,
    /// Random horizontal flips of training images.
    pub flip: bool,
    pub seed: u64,
    /// Evaluate every this many steps; 0 disables.
    pub eval_interval: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.02,
            momentum: 0.9,
            batch_size: 6,
            total_steps: 2000,
            theta_c: DEFAULT_THETA,
            xi: 3,
            head_agg: HeadAgg::Mean,
            crop: true,
            flip: true,
            seed: 0,
            eval_interval: 100,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, layers: usize) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!("clip_norm must be >= 0, got {}", self.clip_norm)));
        }
        check_theta(self.theta_c)?;
        if self.xi == 0 || self.xi >= layers {
            return Err(Error::Config(format!(
                "xi {} outside 1..={}",
                self.xi,
                layers - 1
            )));
        }
        Ok(())
    }

    pub fn crop_settings(&self) -> CropSettings {
        CropSettings {
            xi: self.xi,
            theta: self.theta_c,
            head_agg: self.head_agg,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.lr0, 0.02);
        assert_eq!(c.momentum, 0.9);
        assert_eq!(c.batch_size, 6);
        c.validate(6).unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let ok = TrainConfig::default();
        for bad in [
            TrainConfig { lr0: 0.0, ..ok.clone() },
            TrainConfig { momentum: 1.0, ..ok.clone() },
            TrainConfig { total_steps: 0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { theta_c: 0.7, ..ok.clone() },
            TrainConfig { xi: 6, ..ok.clone() },
            TrainConfig { xi: 0, ..ok.clone() },
        ] {
            assert!(bad.validate(6).is_err(), "{bad:?}");
        }
    }
}
