use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::eval::evaluate;
use super::loss::LossReport;
use super::metrics::MetricRow;
use super::schedule::cosine_lr;
use super::sgd::{sgd_step, SgdState};
use crate::augment::{crop_resize, horizontal_flip, plan_crop, BBox};
use crate::data::{batches, Dataset, Sample};
use crate::error::{Error, Result};
use crate::has::TokenSelection;
use crate::model::Davt;
use crate::tensor::{Tape, Tensor};

const COIN_STREAM_TAG: u64 = 0x6461_7674_666c_6970;

/// The discrete choices one sample's forward pass made: flip, token
/// selections and crop box. Replaying a plan makes the loss a smooth
/// function of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub flipped: bool,
    pub selections: Option<Vec<TokenSelection>>,
    pub crop_box: Option<BBox>,
    pub crop_selections: Option<Vec<TokenSelection>>,
}

#[derive(Clone, Debug)]
pub struct SampleOutcome {
    /// Unweighted cross-entropy of the original branch.
    pub loss_v: f64,
    /// Unweighted cross-entropy of the cropped branch (0 when off).
    pub loss_c: f64,
    /// Gradients of `weight·(loss_v + loss_c)`, in parameter order.
    pub grads: Option<Vec<Tensor>>,
    pub plan: SamplePlan,
}

/// Both branches of one sample on a single tape.
pub fn sample_forward_backward(
    model: &Davt,
    config: &TrainConfig,
    sample: &Sample,
    coin: f64,
    weight: f64,
    pinned: Option<&SamplePlan>,
    want_grads: bool,
) -> Result<SampleOutcome> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, want_grads);
    let flipped = match pinned {
        Some(p) => p.flipped,
        None => config.flip && coin < 0.5,
    };
    let image = horizontal_flip(&sample.image, if flipped { 0.0 } else { 1.0 });

    let out = model.forward_with(
        &mut tape,
        &vars,
        &image,
        pinned.and_then(|p| p.selections.as_deref()),
    )?;
    let ce_v = tape.cross_entropy(out.logits, sample.label)?;
    let mut plan = SamplePlan {
        flipped,
        selections: out.selections,
        crop_box: None,
        crop_selections: None,
    };

    let mut loss = tape.scale(ce_v, weight)?;
    let mut loss_c = 0.0;
    if config.crop {
        let (bbox, cropped) = match pinned.and_then(|p| p.crop_box) {
            Some(b) => (b, crop_resize(&image, &b)?),
            None => {
                let p = plan_crop(&image, &out.attention, &config.crop_settings())?;
                (p.bbox, p.image)
            }
        };
        let out_c = model.forward_with(
            &mut tape,
            &vars,
            &cropped,
            pinned.and_then(|p| p.crop_selections.as_deref()),
        )?;
        let ce_c = tape.cross_entropy(out_c.logits, sample.label)?;
        loss_c = tape.value(ce_c).item()?;
        let weighted = tape.scale(ce_c, weight)?;
        loss = tape.add(loss, weighted)?;
        plan.crop_box = Some(bbox);
        plan.crop_selections = out_c.selections;
    }
    let loss_v = tape.value(ce_v).item()?;

    let grads = if want_grads {
        tape.backward(loss)?;
        Some(
            vars.all
                .iter()
                .map(|&v| tape.grad(v).expect("parameter leaves require grad"))
                .collect(),
        )
    } else {
        None
    };
    Ok(SampleOutcome {
        loss_v,
        loss_c,
        grads,
        plan,
    })
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for v in grads.iter_mut().flat_map(|g| g.data_mut().iter_mut()) {
            *v *= scale;
        }
    }
    norm
}

/// Model, optimiser state and metric history of one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Davt,
    pub config: TrainConfig,
    pub sgd: SgdState,
    pub history: Vec<MetricRow>,
}

impl Trainer {
    pub fn new(model: Davt, config: TrainConfig) -> Result<Self> {
        model.config.validate()?;
        config.validate(model.config.layers)?;
        let sgd = SgdState::new(&model.params, config.momentum);
        Ok(Self {
            model,
            config,
            sgd,
            history: Vec::new(),
        })
    }

    /// Continues a saved run; the next update is `checkpoint.sgd.step`.
    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        let model = checkpoint.model();
        model.config.validate()?;
        checkpoint.train.validate(model.config.layers)?;
        if checkpoint.history.len() != checkpoint.sgd.step {
            return Err(Error::Checkpoint(format!(
                "history has {} rows but step is {}",
                checkpoint.history.len(),
                checkpoint.sgd.step
            )));
        }
        Ok(Self {
            model,
            config: checkpoint.train,
            sgd: checkpoint.sgd,
            history: checkpoint.history,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            vit: self.model.config.clone(),
            options: self.model.options,
            train: self.config.clone(),
            params: self.model.params.clone(),
            sgd: self.sgd.clone(),
            history: self.history.clone(),
        }
    }

    pub fn step(&self) -> usize {
        self.sgd.step
    }

    pub fn is_done(&self) -> bool {
        self.sgd.step >= self.config.total_steps
    }

    /// Flip coins for the samples of update `step`; independent of batch
    /// scheduling and thread count.
    pub fn coins(&self, step: usize, count: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ COIN_STREAM_TAG);
        rng.set_stream(step as u64);
        (0..count).map(|_| rng.random::<f64>()).collect()
    }

    /// Sample indices for update `step` (0-based).
    pub fn batch_indices(&self, dataset_len: usize, step: usize) -> Vec<usize> {
        let per_epoch = dataset_len.div_ceil(self.config.batch_size);
        let epoch = step / per_epoch;
        let mut all = batches(dataset_len, self.config.batch_size, self.config.seed, epoch as u64);
        all.swap_remove(step % per_epoch)
    }

    /// One optimiser update on `batch`.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let step = self.sgd.step;
        let coins = self.coins(step, batch.len());
        let weight = 1.0 / batch.len() as f64;
        let model = &self.model;
        let config = &self.config;
        let outcomes: Vec<SampleOutcome> = batch
            .par_iter()
            .zip(coins.par_iter())
            .map(|(s, &coin)| sample_forward_backward(model, config, s, coin, weight, None, true))
            .collect::<Result<_>>()?;

        // Fixed-order reduction.
        let mut grads: Vec<Tensor> = model.params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        let mut loss_v = 0.0;
        let mut loss_c = 0.0;
        for o in &outcomes {
            loss_v += o.loss_v;
            loss_c += o.loss_c;
            for (acc, g) in grads.iter_mut().zip(o.grads.as_ref().expect("grads requested")) {
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v;
                }
            }
        }
        if self.config.clip_norm > 0.0 {
            clip_global_norm(&mut grads, self.config.clip_norm);
        }
        let report = LossReport::new(loss_v * weight, loss_c * weight);
        let lr = cosine_lr(step, self.config.total_steps, self.config.lr0);
        sgd_step(&mut self.model.params, &grads, &mut self.sgd, lr)?;
        self.history.push(MetricRow {
            step: self.sgd.step,
            lr,
            loss_v: report.original,
            loss_c: report.cropped,
            loss_total: report.total,
            eval_top1: None,
        });
        Ok(report)
    }

    /// Trains until `total_steps`, evaluating every `eval_interval` steps and
    /// at the end. `on_step` sees each finished row.
    pub fn run(
        &mut self,
        train: &Dataset,
        eval: Option<&Dataset>,
        mut on_step: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        if train.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        if train.num_classes() != self.model.config.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes but model expects {}",
                train.num_classes(),
                self.model.config.num_classes
            )));
        }
        while !self.is_done() {
            let idx = self.batch_indices(train.len(), self.sgd.step);
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train.samples[i]).collect();
            self.train_step(&batch)?;
            let step = self.sgd.step;
            let due = self.config.eval_interval > 0 && step.is_multiple_of(self.config.eval_interval);
            if due || step == self.config.total_steps {
                let report = evaluate(&self.model, eval.unwrap_or(train))?;
                if let Some(row) = self.history.last_mut() {
                    row.eval_top1 = Some(report.top1);
                }
            }
            on_step(self)?;
        }
        Ok(())
    }
}
