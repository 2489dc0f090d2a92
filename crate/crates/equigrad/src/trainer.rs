//! The training procedures. All of them move parameters with the same SGD
//! arithmetic (p <- p - lr * g); they differ in where gradients are taken:
//!
//! * ordinary / fixed-weight: one joint pass, one backward through the
//!   weighted loss total, one update of every parameter.
//! * split-only: per-task shared gradients at the current parameters are
//!   summed and applied to the shared set, then each head is updated at the
//!   new shared parameters.
//! * single-step: each task first probes the loss landscape by taking a
//!   temporary gradient step of the shared set on its own loss; the shared
//!   gradients are re-taken at the probed points, summed, and applied to the
//!   original shared parameters as-is (no differentiation through the
//!   probe). Heads update last, like split-only. A zero probe step size
//!   reduces this procedure to split-only exactly.
//!
//! Every step uses one mini-batch for all of its passes (audited via batch
//! digests), and a step that produces a non-finite number anywhere rolls all
//! parameters back to their entry values and reports divergence.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::objective::MultitaskObjective;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainerKind {
    /// One backward through the plain sum of the task losses.
    Ordinary,
    /// Like `Ordinary`, with explicit per-task loss weights.
    FixedWeight,
    /// Alternating shared and head updates, no probe steps.
    SplitOnly,
    /// Per-task probe updates of the shared set before the real update.
    SingleStep,
}

impl TrainerKind {
    pub const ALL: [TrainerKind; 4] = [
        TrainerKind::Ordinary,
        TrainerKind::FixedWeight,
        TrainerKind::SplitOnly,
        TrainerKind::SingleStep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainerKind::Ordinary => "ordinary",
            TrainerKind::FixedWeight => "fixed-weight",
            TrainerKind::SplitOnly => "split-only",
            TrainerKind::SingleStep => "single-step",
        }
    }
}

impl std::fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TrainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown trainer {s:?}; expected ordinary, fixed-weight, split-only, or single-step"
                ))
            })
    }
}

/// Step sizes and weighting for one trainer. `inner_lr` drives the per-task
/// probe updates, `outer_lr` the shared update, and `head_lr` the head
/// updates (the ordinary trainers use it for all parameters). An inner step
/// of zero is allowed and makes single-step coincide with split-only.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub kind: TrainerKind,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub head_lr: f64,
    /// Explicit per-task weights; only the fixed-weight trainer takes them.
    pub loss_weights: Option<Vec<f64>>,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainerConfig {
    pub fn new(kind: TrainerKind) -> Self {
        Self {
            kind,
            inner_lr: 0.001,
            outer_lr: 0.001,
            head_lr: 0.001,
            loss_weights: None,
            batch_size: 256,
            seed: 0,
        }
    }

    /// The weights a joint step runs with: explicit for fixed-weight, unit
    /// otherwise.
    pub fn joint_weights(&self, tasks: usize) -> Vec<f64> {
        match &self.loss_weights {
            Some(w) => w.clone(),
            None => vec![1.0; tasks],
        }
    }

    pub fn validate(&self, tasks: usize) -> Result<()> {
        if tasks == 0 {
            return Err(Error::Config("objective has no tasks".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".to_string()));
        }
        for (what, lr) in [
            ("inner step size", self.inner_lr),
            ("outer step size", self.outer_lr),
            ("head step size", self.head_lr),
        ] {
            if !lr.is_finite() {
                return Err(Error::Config(format!("{what} must be finite, got {lr}")));
            }
        }
        if self.head_lr <= 0.0 {
            return Err(Error::Config(format!(
                "head step size must be positive, got {}",
                self.head_lr
            )));
        }
        let no_weights = |kind: &str| -> Result<()> {
            if self.loss_weights.is_some() {
                return Err(Error::Config(format!(
                    "{kind} training uses no loss weights"
                )));
            }
            Ok(())
        };
        match self.kind {
            TrainerKind::Ordinary => no_weights("ordinary")?,
            TrainerKind::FixedWeight => match &self.loss_weights {
                None => {
                    return Err(Error::Config(
                        "fixed-weight training needs explicit loss weights".to_string(),
                    ))
                }
                Some(w) => {
                    if w.len() != tasks {
                        return Err(Error::Config(format!(
                            "{} loss weights for {tasks} tasks",
                            w.len()
                        )));
                    }
                    if let Some(bad) = w.iter().find(|x| !x.is_finite() || **x <= 0.0) {
                        return Err(Error::Config(format!(
                            "loss weights must be positive and finite, got {bad}"
                        )));
                    }
                }
            },
            TrainerKind::SplitOnly => {
                no_weights("split-only")?;
                if self.outer_lr <= 0.0 {
                    return Err(Error::Config(format!(
                        "outer step size must be positive, got {}",
                        self.outer_lr
                    )));
                }
            }
            TrainerKind::SingleStep => {
                no_weights("single-step")?;
                if self.inner_lr < 0.0 {
                    return Err(Error::Config(format!(
                        "inner step size must be nonnegative, got {}",
                        self.inner_lr
                    )));
                }
                if self.outer_lr <= 0.0 {
                    return Err(Error::Config(format!(
                        "outer step size must be positive, got {}",
                        self.outer_lr
                    )));
                }
            }
        }
        Ok(())
    }
}

/// What one training step observed. Post-probe fields are present for the
/// single-step trainer only; gradient norms are taken at the deepest
/// parameterized shared layer and are absent for the joint trainers, whose
/// single backward pass cannot attribute gradients to tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub pre_losses: Vec<f64>,
    pub post_losses: Option<Vec<f64>>,
    pub pre_grad_norms: Option<Vec<f64>>,
    pub post_grad_norms: Option<Vec<f64>>,
    pub batch_digest: u64,
}

/// Deep copy of a named parameter set's values. Restore is bit-exact and
/// checks that the parameter structure has not changed since capture.
#[derive(Debug, Clone)]
pub struct ParamSnapshot {
    entries: Vec<(String, Vec<f64>)>,
}

impl ParamSnapshot {
    pub fn capture(params: &[(String, &Tensor)]) -> Self {
        Self {
            entries: params
                .iter()
                .map(|(name, t)| (name.clone(), t.data().to_vec()))
                .collect(),
        }
    }

    pub fn restore(&self, params: &mut [(String, &mut Tensor)]) -> Result<()> {
        if params.len() != self.entries.len() {
            return Err(Error::InvalidArg(format!(
                "snapshot holds {} tensors, parameter set has {}",
                self.entries.len(),
                params.len()
            )));
        }
        for ((name, t), (snap_name, values)) in params.iter_mut().zip(&self.entries) {
            if name != snap_name || t.len() != values.len() {
                return Err(Error::Param {
                    name: name.clone(),
                    reason: format!("does not match snapshot entry {snap_name}"),
                });
            }
            t.data_mut().copy_from_slice(values);
        }
        Ok(())
    }
}

/// Runs one training step of the configured kind.
pub fn train_step<O: MultitaskObjective>(
    obj: &mut O,
    batch: &O::Batch,
    config: &TrainerConfig,
) -> Result<StepOutcome> {
    config.validate(obj.task_count())?;
    match config.kind {
        TrainerKind::Ordinary | TrainerKind::FixedWeight => {
            let weights = config.joint_weights(obj.task_count());
            ordinary_step(obj, batch, &weights, config.head_lr)
        }
        TrainerKind::SplitOnly => split_only_step(obj, batch, config.outer_lr, config.head_lr),
        TrainerKind::SingleStep => {
            single_step_update(obj, batch, config.inner_lr, config.outer_lr, config.head_lr)
        }
    }
}

/// One backward through total = sum_i w_i L_i, then one update of every
/// parameter at `step_size`. Zero weights are accepted here (they switch a
/// task off); config validation is stricter.
pub fn ordinary_step<O: MultitaskObjective>(
    obj: &mut O,
    batch: &O::Batch,
    weights: &[f64],
    step_size: f64,
) -> Result<StepOutcome> {
    check_lr("step size", step_size, false)?;
    if weights.len() != obj.task_count() {
        return Err(Error::InvalidArg(format!(
            "{} loss weights for {} tasks",
            weights.len(),
            obj.task_count()
        )));
    }
    guarded(obj, |obj, pre_losses| {
        let mut pass = obj.joint_pass(batch, weights)?;
        pre_losses.extend_from_slice(&pass.task_losses);
        pass.graph.backward(pass.total)?;
        let mut grads = read_grads(&pass.graph, &pass.shared_binding)?;
        for head_binding in &pass.head_bindings {
            grads.extend(read_grads(&pass.graph, head_binding)?);
        }
        apply_update(&mut obj.all_params_mut(), &grads, step_size)?;
        Ok(StepOutcome {
            pre_losses: pre_losses.clone(),
            post_losses: None,
            // One merged backward: per-task shared gradients are not
            // observable here.
            pre_grad_norms: None,
            post_grad_norms: None,
            batch_digest: pass.batch_digest,
        })
    })
}

/// Shared update from the sum of per-task shared gradients at `outer_lr`,
/// then per-task head updates at `head_lr` against the new shared values.
pub fn split_only_step<O: MultitaskObjective>(
    obj: &mut O,
    batch: &O::Batch,
    outer_lr: f64,
    head_lr: f64,
) -> Result<StepOutcome> {
    check_lr("outer step size", outer_lr, false)?;
    check_lr("head step size", head_lr, false)?;
    guarded(obj, |obj, pre_losses| {
        let tasks = obj.task_count();
        let span = obj.last_shared_layer_span();
        let mut digest = DigestAudit::new();
        let mut pre_norms = Vec::with_capacity(tasks);
        let mut shared_sum: Option<Vec<Vec<f64>>> = None;
        for task in 0..tasks {
            let pass = backward_task(obj, batch, task, span)?;
            digest.check(pass.digest)?;
            pre_losses.push(pass.loss);
            pre_norms.push(pass.norm);
            accumulate(&mut shared_sum, pass.shared_grads);
        }
        let sum = shared_sum.expect("task count validated nonzero");
        apply_update(&mut obj.shared_params_mut(), &sum, outer_lr)?;
        update_heads(obj, batch, head_lr, &mut digest)?;
        Ok(StepOutcome {
            pre_losses: pre_losses.clone(),
            post_losses: None,
            pre_grad_norms: collect_norms(pre_norms),
            post_grad_norms: None,
            batch_digest: digest.value(),
        })
    })
}

/// The probe procedure, one task at a time on the same batch:
///
/// 1. gradient g_i of task i's loss at the entry shared parameters;
/// 2. probe values theta_i = entry - inner_lr * g_i, installed temporarily;
/// 3. gradient h_i and loss of task i re-taken at the probe, then the entry
///    values restored;
/// 4. shared update: entry - outer_lr * sum_i h_i (h_i applied verbatim, no
///    second derivatives);
/// 5. per-task head updates at `head_lr` against the new shared values.
pub fn single_step_update<O: MultitaskObjective>(
    obj: &mut O,
    batch: &O::Batch,
    inner_lr: f64,
    outer_lr: f64,
    head_lr: f64,
) -> Result<StepOutcome> {
    check_lr("inner step size", inner_lr, true)?;
    check_lr("outer step size", outer_lr, false)?;
    check_lr("head step size", head_lr, false)?;
    guarded(obj, |obj, pre_losses| {
        let tasks = obj.task_count();
        let span = obj.last_shared_layer_span();
        let entry = ParamSnapshot::capture(&obj.shared_params());
        let mut digest = DigestAudit::new();
        let mut post_losses = Vec::with_capacity(tasks);
        let mut pre_norms = Vec::with_capacity(tasks);
        let mut post_norms = Vec::with_capacity(tasks);
        let mut outer_sum: Option<Vec<Vec<f64>>> = None;
        for task in 0..tasks {
            let pre = backward_task(obj, batch, task, span)?;
            digest.check(pre.digest)?;
            pre_losses.push(pre.loss);
            pre_norms.push(pre.norm);
            // Probe: a temporary step of the shared set on this task's own
            // gradient. Skipping the arithmetic entirely for a zero step
            // size keeps the probe bit-identical to the entry values.
            if inner_lr != 0.0 {
                apply_update(&mut obj.shared_params_mut(), &pre.shared_grads, inner_lr)?;
            }
            let probed = backward_task(obj, batch, task, span)?;
            digest.check(probed.digest)?;
            post_losses.push(probed.loss);
            post_norms.push(probed.norm);
            accumulate(&mut outer_sum, probed.shared_grads);
            entry.restore(&mut obj.shared_params_mut())?;
        }
        let sum = outer_sum.expect("task count validated nonzero");
        apply_update(&mut obj.shared_params_mut(), &sum, outer_lr)?;
        update_heads(obj, batch, head_lr, &mut digest)?;
        Ok(StepOutcome {
            pre_losses: pre_losses.clone(),
            post_losses: Some(post_losses),
            pre_grad_norms: collect_norms(pre_norms),
            post_grad_norms: collect_norms(post_norms),
            batch_digest: digest.value(),
        })
    })
}

/// Captures every parameter, runs the step body, and rolls parameters back
/// if the body fails. Errors coming from non-finite arithmetic are reported
/// as divergence carrying the per-task losses seen so far.
fn guarded<O, F>(obj: &mut O, body: F) -> Result<StepOutcome>
where
    O: MultitaskObjective,
    F: FnOnce(&mut O, &mut Vec<f64>) -> Result<StepOutcome>,
{
    let entry = ParamSnapshot::capture(&obj.all_params());
    let mut pre_losses = Vec::new();
    match body(obj, &mut pre_losses) {
        Ok(outcome) => Ok(outcome),
        Err(e) => {
            entry
                .restore(&mut obj.all_params_mut())
                .expect("parameter structure must not change during a step");
            if e.is_non_finite() {
                Err(Error::Diverged { losses: pre_losses })
            } else {
                Err(e)
            }
        }
    }
}

struct TaskGradients {
    loss: f64,
    shared_grads: Vec<Vec<f64>>,
    norm: Option<f64>,
    digest: u64,
}

/// Forward and backward for one task; returns its loss, the gradients of the
/// shared parameters, and the gradient norm at the diagnostic span.
fn backward_task<O: MultitaskObjective>(
    obj: &O,
    batch: &O::Batch,
    task: usize,
    span: Option<(usize, usize)>,
) -> Result<TaskGradients> {
    let mut pass = obj.task_pass(batch, task)?;
    pass.graph.backward(pass.loss)?;
    let shared_grads = read_grads(&pass.graph, &pass.shared_binding)?;
    let norm = span_norm(&pass.graph, &pass.shared_binding, span)?;
    Ok(TaskGradients {
        loss: pass.loss_value,
        shared_grads,
        norm,
        digest: pass.batch_digest,
    })
}

/// Per-task head updates at the current shared values. Tasks without head
/// parameters are skipped without building a graph.
fn update_heads<O: MultitaskObjective>(
    obj: &mut O,
    batch: &O::Batch,
    head_lr: f64,
    digest: &mut DigestAudit,
) -> Result<()> {
    for task in 0..obj.task_count() {
        if obj.head_params_mut(task)?.is_empty() {
            continue;
        }
        let mut pass = obj.task_pass(batch, task)?;
        digest.check(pass.batch_digest)?;
        pass.graph.backward(pass.loss)?;
        let grads = read_grads(&pass.graph, &pass.head_binding)?;
        let mut head = obj.head_params_mut(task)?;
        apply_update(&mut head, &grads, head_lr)?;
    }
    Ok(())
}

/// p <- p - lr * g, the same floating-point expression for every update in
/// this module, so procedures that should coincide do so bit for bit.
fn apply_update(params: &mut [(String, &mut Tensor)], grads: &[Vec<f64>], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArg(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for ((name, t), g) in params.iter_mut().zip(grads) {
        if t.len() != g.len() {
            return Err(Error::Param {
                name: name.clone(),
                reason: format!("gradient has {} entries for {} values", g.len(), t.len()),
            });
        }
        for (d, gi) in t.data_mut().iter_mut().zip(g) {
            *d -= lr * gi;
        }
        if !t.data().iter().all(|v| v.is_finite()) {
            return Err(Error::Param {
                name: name.clone(),
                reason: "non-finite after update".to_string(),
            });
        }
    }
    Ok(())
}

fn read_grads(g: &Graph, binding: &[Var]) -> Result<Vec<Vec<f64>>> {
    binding.iter().map(|v| Ok(g.grad(*v)?.to_vec())).collect()
}

fn span_norm(g: &Graph, binding: &[Var], span: Option<(usize, usize)>) -> Result<Option<f64>> {
    let Some((offset, count)) = span else {
        return Ok(None);
    };
    let mut acc = 0.0;
    for v in &binding[offset..offset + count] {
        for x in g.grad(*v)? {
            acc += x * x;
        }
    }
    Ok(Some(acc.sqrt()))
}

fn accumulate(acc: &mut Option<Vec<Vec<f64>>>, grads: Vec<Vec<f64>>) {
    match acc {
        None => *acc = Some(grads),
        Some(sum) => {
            for (s, g) in sum.iter_mut().zip(&grads) {
                for (a, b) in s.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }
}

fn collect_norms(norms: Vec<Option<f64>>) -> Option<Vec<f64>> {
    norms.into_iter().collect()
}

fn check_lr(what: &str, lr: f64, allow_zero: bool) -> Result<()> {
    let ok = lr.is_finite() && (lr > 0.0 || (allow_zero && lr == 0.0));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArg(format!(
            "{what} must be {} and finite, got {lr}",
            if allow_zero {
                "nonnegative"
            } else {
                "positive"
            }
        )))
    }
}

/// Verifies that every pass within one training step consumed the same
/// batch.
struct DigestAudit(Option<u64>);

impl DigestAudit {
    fn new() -> Self {
        Self(None)
    }

    fn check(&mut self, digest: u64) -> Result<()> {
        match self.0 {
            None => {
                self.0 = Some(digest);
                Ok(())
            }
            Some(prev) if prev == digest => Ok(()),
            Some(prev) => Err(Error::InvalidArg(format!(
                "training step consumed two different batches (digests {prev:#018x} and {digest:#018x})"
            ))),
        }
    }

    fn value(&self) -> u64 {
        self.0.unwrap_or(0)
    }
}
