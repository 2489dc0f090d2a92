//! The trainer-facing contract: a family of tasks over one shared parameter
//! set, with per-task and joint loss passes on fresh single-use graphs.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// One task's forward pass. The graph is kept alive so the caller can run
/// backward on `loss` and read gradients through the recorded bindings.
pub struct TaskPass {
    pub graph: Graph,
    pub loss: Var,
    pub loss_value: f64,
    /// Graph leaves of the shared parameters, in `shared_params` order.
    pub shared_binding: Vec<Var>,
    /// Graph leaves of this task's head parameters; empty when the task has
    /// no parameters of its own.
    pub head_binding: Vec<Var>,
    pub batch_digest: u64,
}

/// A pass over every task on one graph; `total` is the weighted sum of the
/// per-task losses, and shared work (the trunk) runs once.
pub struct JointPass {
    pub graph: Graph,
    pub total: Var,
    pub task_losses: Vec<f64>,
    pub shared_binding: Vec<Var>,
    pub head_bindings: Vec<Vec<Var>>,
    pub batch_digest: u64,
}

/// A multitask objective: T tasks whose losses share some parameters.
///
/// Contract: parameter lists are stable between calls while no parameters
/// are added or removed; `all_params*` lists the shared set first and then
/// each task's head set in ascending task order; names are unique. A pass's
/// bindings parallel the corresponding parameter lists entry for entry.
pub trait MultitaskObjective {
    /// Per-step data consumed by every pass of one training step. Analytic
    /// objectives that carry their own state use `()`.
    type Batch;

    fn task_count(&self) -> usize;

    fn shared_params(&self) -> Vec<(String, &Tensor)>;
    fn shared_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;
    fn head_params_mut(&mut self, task: usize) -> Result<Vec<(String, &mut Tensor)>>;
    fn all_params(&self) -> Vec<(String, &Tensor)>;
    fn all_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    /// Range (offset, count) within the shared binding that holds the
    /// deepest parameterized shared layer; gradient-norm diagnostics are
    /// taken there. `None` switches those diagnostics off.
    fn last_shared_layer_span(&self) -> Option<(usize, usize)>;

    fn task_pass(&self, batch: &Self::Batch, task: usize) -> Result<TaskPass>;
    fn joint_pass(&self, batch: &Self::Batch, weights: &[f64]) -> Result<JointPass>;
}
