use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Branch losses of one step. `total` is always `original + cropped`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub original: f64,
    pub cropped: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(original: f64, cropped: f64) -> Self {
        Self {
            original,
            cropped,
            total: total_loss(original, cropped),
        }
    }
}

pub fn total_loss(original: f64, cropped: f64) -> f64 {
    original + cropped
}

/// Untracked `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    // ln_1p keeps precision when one logit dominates.
    let top = crate::model::argmax(logits);
    let max = logits[top];
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, v)| (v - max).exp())
        .sum();
    Ok(rest.ln_1p() + (max - logits[label]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        for c in 2..7 {
            let l = cross_entropy(&vec![0.3; c], c - 1).unwrap();
            assert!((l - (c as f64).ln()).abs() < 1e-15);
        }
        assert!((cross_entropy(&[0.0, 0.0], 0).unwrap() - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn confident_true_class_goes_to_zero() {
        let mut prev = f64::INFINITY;
        for big in [1.0, 10.0, 100.0, 700.0] {
            let l = cross_entropy(&[big, 0.0, 0.0], 0).unwrap();
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-300);
        assert!(cross_entropy(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn total_is_plain_sum() {
        let r = LossReport::new(0.7, 0.5);
        assert!((r.total - 1.2).abs() < 1e-15);
        assert_eq!(r.total, r.original + r.cropped);
        assert_eq!(LossReport::new(0.7, 0.0).total, 0.7);
    }
}
