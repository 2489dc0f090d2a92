//! Run telemetry: loss-ratio traces, split evaluation, early stopping, and
//! the per-step metrics CSV. The CSV's `grad_norm` column is the task's
//! shared-gradient norm at the step entry; post-probe columns fill only for
//! the single-step trainer.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::overlay::OverlaySplit;
use crate::error::{Error, Result};
use crate::model::MultitaskModel;
use crate::trainer::StepOutcome;

/// One appended ratio observation: task 0's share of the total loss before
/// the probe updates and, when the trainer takes them, after.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioRecord {
    pub step: usize,
    pub r_pre: f64,
    pub r_post: Option<f64>,
}

/// Accumulates per-step loss ratios over a run. Steps whose total loss is
/// zero carry no ratio; they are skipped and counted.
#[derive(Debug, Clone, Default)]
pub struct LossRatioTrace {
    records: Vec<RatioRecord>,
    skipped: usize,
}

impl LossRatioTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_step(&mut self, step: usize, outcome: &StepOutcome) -> Result<()> {
        if outcome.pre_losses.len() < 2 {
            return Err(Error::InvalidArg(format!(
                "loss ratios need at least 2 tasks, step has {}",
                outcome.pre_losses.len()
            )));
        }
        let total_pre: f64 = outcome.pre_losses.iter().sum();
        if total_pre == 0.0 {
            self.skipped += 1;
            return Ok(());
        }
        let r_post = match &outcome.post_losses {
            None => None,
            Some(post) => {
                let total: f64 = post.iter().sum();
                if total == 0.0 {
                    self.skipped += 1;
                    return Ok(());
                }
                Some(post[0] / total)
            }
        };
        self.records.push(RatioRecord {
            step,
            r_pre: outcome.pre_losses[0] / total_pre,
            r_post,
        });
        Ok(())
    }

    pub fn records(&self) -> &[RatioRecord] {
        &self.records
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Mean |r_pre - target| over all records; None when nothing was
    /// recorded.
    pub fn mean_pre_deviation(&self, target: f64) -> Option<f64> {
        mean(self.records.iter().map(|r| (r.r_pre - target).abs()))
    }

    /// Mean |r_post - target| over records that carry a post ratio.
    pub fn mean_post_deviation(&self, target: f64) -> Option<f64> {
        mean(
            self.records
                .iter()
                .filter_map(|r| r.r_post)
                .map(|r| (r - target).abs()),
        )
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Per-task accuracy and mean loss over one split, every sample counted
/// exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub samples: usize,
    /// Percentages in [0, 100], one per task.
    pub accuracy: Vec<f64>,
    pub mean_loss: Vec<f64>,
}

/// Evaluates the model on a split. Samples are visited in digest order, so
/// the report does not depend on how the split happens to be arranged.
pub fn evaluate(
    model: &MultitaskModel,
    split: &OverlaySplit,
    name: &str,
    batch_size: usize,
) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::InvalidArg(format!("split {name:?} is empty")));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArg("batch size must be positive".to_string()));
    }
    let n = split.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| split.sample_digest(i));
    let tasks = model.task_count();
    let mut correct = vec![0usize; tasks];
    let mut loss_sum = vec![0.0; tasks];
    for chunk in order.chunks(batch_size) {
        let batch = split.batch(chunk)?;
        for task in 0..tasks {
            let (logits, loss) = model.eval_task(&batch, task)?;
            let classes = logits.len() / chunk.len();
            let labels = batch.labels(task)?;
            for (row, &label) in logits.chunks(classes).zip(labels) {
                if argmax(row) == label {
                    correct[task] += 1;
                }
            }
            loss_sum[task] += loss * chunk.len() as f64;
        }
    }
    Ok(EvalReport {
        split: name.to_string(),
        samples: n,
        accuracy: correct
            .iter()
            .map(|&c| 100.0 * c as f64 / n as f64)
            .collect(),
        mean_loss: loss_sum.iter().map(|s| s / n as f64).collect(),
    })
}

/// First index of the row maximum, matching the prediction rule everywhere.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// The quantity early stopping watches: the unweighted mean of the per-task
/// losses on the validation split.
pub fn validation_objective(report: &EvalReport) -> f64 {
    report.mean_loss.iter().sum::<f64>() / report.mean_loss.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New best objective; the caller should checkpoint now.
    Improved,
    Wait,
    Stop,
}

/// Patience-based early stopping on a to-minimize objective. The best
/// checkpoint is the caller's to save on `Improved` and restore at the end;
/// a non-finite objective never counts as an improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopState {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since: usize,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            since: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, objective: f64) -> StopDecision {
        if objective.is_finite() && objective < self.best {
            self.best = objective;
            self.best_epoch = Some(epoch);
            self.since = 0;
            return StopDecision::Improved;
        }
        self.since += 1;
        if self.since >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Wait
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since
    }
}

pub const METRICS_HEADER: &str =
    "step,epoch,task,loss_pre,loss_post,ratio_pre,ratio_post,grad_norm";

/// Streams the per-step CSV: one row per (step, task), fixed column order,
/// empty cells where a trainer does not produce the quantity.
pub struct MetricsWriter {
    out: BufWriter<fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path)?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out })
    }

    pub fn write_step(&mut self, step: usize, epoch: usize, outcome: &StepOutcome) -> Result<()> {
        let total_pre: f64 = outcome.pre_losses.iter().sum();
        let total_post = outcome.post_losses.as_ref().map(|p| p.iter().sum::<f64>());
        for (task, &loss_pre) in outcome.pre_losses.iter().enumerate() {
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                self.out,
                "{step},{epoch},{task},{loss_pre},{},{},{},{}",
                cell(outcome.post_losses.as_ref().map(|p| p[task])),
                cell((total_pre != 0.0).then(|| loss_pre / total_pre)),
                cell(outcome.post_losses.as_ref().and_then(|p| {
                    let total = total_post.expect("totalled above");
                    (total != 0.0).then(|| p[task] / total)
                })),
                cell(outcome.pre_grad_norms.as_ref().map(|n| n[task])),
            )?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
