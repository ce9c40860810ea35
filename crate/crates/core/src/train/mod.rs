//! Two-branch training: original and attention-cropped images share one
//! tape and one optimiser step, with loss `L_total = L_V + L_C`.

mod checkpoint;
mod config;
mod eval;
mod loss;
mod metrics;
mod schedule;
mod sgd;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use eval::{evaluate, EvalReport};
pub use loss::{cross_entropy, total_loss, LossReport};
pub use metrics::{metrics_csv, write_metrics_csv, MetricRow, METRICS_HEADER};
pub use schedule::cosine_lr;
pub use sgd::{sgd_step, SgdState};
pub use trainer::{clip_global_norm, sample_forward_backward, SampleOutcome, SamplePlan, Trainer};
