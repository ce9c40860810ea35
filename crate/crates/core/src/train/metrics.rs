use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "step,lr,loss_v,loss_c,loss_total,eval_top1";

/// One optimiser step. `step` counts completed updates (1-based); `lr` is
/// the rate that update used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub lr: f64,
    pub loss_v: f64,
    pub loss_c: f64,
    pub loss_total: f64,
    pub eval_top1: Option<f64>,
}

impl MetricRow {
    pub fn csv_line(&self) -> String {
        let eval = self.eval_top1.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.step, self.lr, self.loss_v, self.loss_c, self.loss_total, eval
        )
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.csv_line());
    }
    out
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}
