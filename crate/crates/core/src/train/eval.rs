use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Davt;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub correct: usize,
    pub total: usize,
    /// Accuracy per class; `None` for classes absent from the dataset.
    pub per_class: Vec<Option<f64>>,
}

/// Top-1 accuracy on un-augmented images.
pub fn evaluate(model: &Davt, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let classes = model.config.num_classes;
    if dataset.num_classes() != classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but model expects {classes}",
            dataset.num_classes()
        )));
    }
    let predictions: Vec<usize> = dataset
        .samples
        .par_iter()
        .map(|s| model.predict(&s.image))
        .collect::<Result<_>>()?;
    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (s, &p) in dataset.samples.iter().zip(&predictions) {
        counts[s.label] += 1;
        if p == s.label {
            hits[s.label] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    Ok(EvalReport {
        top1: correct as f64 / dataset.len() as f64,
        correct,
        total: dataset.len(),
        per_class: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
            .collect(),
    })
}
