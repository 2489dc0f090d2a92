//! Shared-trunk, multi-head model: the explicit split into shared and
//! task-specific parameters that every training procedure updates separately.
//!
//! Parameters carry stable names for checkpoints and diagnostics: trunk
//! tensors as `trunk.{layer}.{weight|bias}`, head tensors as
//! `head{task}.{layer}.{weight|bias}`.

use rand::Rng;

use crate::data::batch::MultiTaskBatch;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Layer, Sequential};
use crate::objective::{JointPass, MultitaskObjective, TaskPass};
use crate::tensor::Tensor;

/// Named parameter views in model order.
pub type NamedParams<'a> = Vec<(String, &'a Tensor)>;

/// How a task turns its logits into a scalar loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean softmax cross entropy against integer labels.
    SoftmaxCrossEntropy,
    /// Mean absolute error between logits and the one-hot encoded labels.
    L1,
}

#[derive(Debug, Clone)]
pub struct MultitaskModel {
    trunk: Sequential,
    heads: Vec<Sequential>,
    loss_kinds: Vec<LossKind>,
}

impl MultitaskModel {
    /// Every head must consume the trunk's output shape; one loss kind per
    /// head. A single head is allowed (the procedures degenerate to plain
    /// single-task SGD there), two or more is the intended use.
    pub fn new(
        trunk: Sequential,
        heads: Vec<Sequential>,
        loss_kinds: Vec<LossKind>,
    ) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::InvalidArg(
                "model needs at least one head".to_string(),
            ));
        }
        if loss_kinds.len() != heads.len() {
            return Err(Error::InvalidArg(format!(
                "{} heads but {} loss kinds",
                heads.len(),
                loss_kinds.len()
            )));
        }
        for (task, head) in heads.iter().enumerate() {
            if head.input_shape() != trunk.output_shape() {
                return Err(Error::ShapeMismatch {
                    op: "model",
                    detail: format!(
                        "head {task} expects input {:?} but the trunk produces {:?}",
                        head.input_shape(),
                        trunk.output_shape()
                    ),
                });
            }
        }
        Ok(Self {
            trunk,
            heads,
            loss_kinds,
        })
    }

    /// The reference architecture for 36x36 single-channel overlay images:
    /// trunk conv(1->10, 5) relu pool conv(10->20, 5) relu pool flatten,
    /// and per task a head dense(->50) relu dense(50->classes).
    pub fn reference<R: Rng>(tasks: usize, classes: usize, rng: &mut R) -> Result<Self> {
        let trunk = Sequential::new(
            vec![1, 36, 36],
            vec![
                Layer::conv2d(1, 10, 5, rng)?,
                Layer::Relu,
                Layer::MaxPool2,
                Layer::conv2d(10, 20, 5, rng)?,
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Flatten,
            ],
        )?;
        let features = trunk.output_shape()[0];
        let mut heads = Vec::with_capacity(tasks);
        for _ in 0..tasks {
            heads.push(Sequential::new(
                vec![features],
                vec![
                    Layer::dense(features, 50, rng)?,
                    Layer::Relu,
                    Layer::dense(50, classes, rng)?,
                ],
            )?);
        }
        Self::new(trunk, heads, vec![LossKind::SoftmaxCrossEntropy; tasks])
    }

    pub fn task_count(&self) -> usize {
        self.heads.len()
    }

    pub fn trunk(&self) -> &Sequential {
        &self.trunk
    }

    /// Per-sample input shape the trunk was built for.
    pub fn input_shape(&self) -> &[usize] {
        self.trunk.input_shape()
    }

    pub fn loss_kind(&self, task: usize) -> Result<LossKind> {
        self.check_task(task)?;
        Ok(self.loss_kinds[task])
    }

    /// All parameters, trunk first, then heads in task order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefixed("trunk", self.trunk.named_params());
        for (task, head) in self.heads.iter().enumerate() {
            out.extend(prefixed(&format!("head{task}"), head.named_params()));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = prefixed("trunk", self.trunk.named_params_mut());
        for (task, head) in self.heads.iter_mut().enumerate() {
            out.extend(prefixed(&format!("head{task}"), head.named_params_mut()));
        }
        out
    }

    /// The shared parameter set (trunk tensors), in binding order.
    pub fn shared_params(&self) -> Vec<(String, &Tensor)> {
        prefixed("trunk", self.trunk.named_params())
    }

    pub fn shared_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        prefixed("trunk", self.trunk.named_params_mut())
    }

    pub fn head_params(&self, task: usize) -> Result<Vec<(String, &Tensor)>> {
        self.check_task(task)?;
        Ok(prefixed(
            &format!("head{task}"),
            self.heads[task].named_params(),
        ))
    }

    pub fn head_params_mut(&mut self, task: usize) -> Result<Vec<(String, &mut Tensor)>> {
        self.check_task(task)?;
        Ok(prefixed(
            &format!("head{task}"),
            self.heads[task].named_params_mut(),
        ))
    }

    /// The disjoint, exhaustive split of all parameters: shared set first,
    /// then one list per task.
    pub fn partition_params(&self) -> (NamedParams<'_>, Vec<NamedParams<'_>>) {
        let shared = self.shared_params();
        let heads = (0..self.heads.len())
            .map(|t| self.head_params(t).expect("task index in range"))
            .collect();
        (shared, heads)
    }

    /// Tensors of the trunk's deepest parameterized layer, as indices into
    /// the shared binding. Gradient-norm diagnostics read these.
    pub fn last_shared_layer_span(&self) -> Option<(usize, usize)> {
        self.trunk.last_param_layer_span()
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.named_params_mut() {
            t.zero_grad();
        }
    }

    /// Logits for one task on an existing graph: head_task(trunk(x)).
    /// Binds all needed parameters internally; for gradient work use
    /// `task_pass`, which exposes the bindings.
    pub fn forward_task(&self, g: &mut Graph, x: Var, task: usize) -> Result<Var> {
        self.check_task(task)?;
        let shared = self.trunk.bind(g)?;
        let features = self.trunk.forward(g, x, &shared)?;
        let head = self.heads[task].bind(g)?;
        self.heads[task].forward(g, features, &head)
    }

    /// Forward and loss for one task on a fresh graph.
    pub fn task_pass(&self, batch: &MultiTaskBatch, task: usize) -> Result<TaskPass> {
        self.check_task(task)?;
        self.check_input(batch)?;
        let labels = batch.labels(task)?;
        let mut graph = Graph::new();
        let x = graph.leaf(batch.x())?;
        let shared_binding = self.trunk.bind(&mut graph)?;
        let features = self.trunk.forward(&mut graph, x, &shared_binding)?;
        let head_binding = self.heads[task].bind(&mut graph)?;
        let logits = self.heads[task].forward(&mut graph, features, &head_binding)?;
        let loss = self.loss_node(&mut graph, logits, labels, self.loss_kinds[task])?;
        let loss_value = graph.value(loss)?[0];
        Ok(TaskPass {
            graph,
            loss,
            loss_value,
            shared_binding,
            head_binding,
            batch_digest: batch.digest(),
        })
    }

    /// Forward-only pass for evaluation: the raw logits (row-major
    /// [batch, classes]) and the batch loss for one task. No gradients.
    pub fn eval_task(&self, batch: &MultiTaskBatch, task: usize) -> Result<(Vec<f64>, f64)> {
        self.check_task(task)?;
        self.check_input(batch)?;
        let mut g = Graph::new();
        let x = g.leaf(batch.x())?;
        let logits = self.forward_task(&mut g, x, task)?;
        let values = g.value(logits)?.to_vec();
        let loss = self.loss_node(&mut g, logits, batch.labels(task)?, self.loss_kinds[task])?;
        let loss_value = g.value(loss)?[0];
        Ok((values, loss_value))
    }

    /// Forward and weighted total loss for all tasks on one graph. Weights
    /// must be finite and nonnegative; a zero switches that task's loss off
    /// without changing the others' graph structure.
    pub fn joint_pass(&self, batch: &MultiTaskBatch, weights: &[f64]) -> Result<JointPass> {
        self.check_input(batch)?;
        if weights.len() != self.heads.len() {
            return Err(Error::InvalidArg(format!(
                "{} loss weights for {} tasks",
                weights.len(),
                self.heads.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidArg(format!(
                "loss weights must be finite and nonnegative, got {w}"
            )));
        }
        let mut graph = Graph::new();
        let x = graph.leaf(batch.x())?;
        let shared_binding = self.trunk.bind(&mut graph)?;
        let features = self.trunk.forward(&mut graph, x, &shared_binding)?;
        let mut head_bindings = Vec::with_capacity(self.heads.len());
        let mut task_losses = Vec::with_capacity(self.heads.len());
        let mut total: Option<Var> = None;
        for (task, head) in self.heads.iter().enumerate() {
            let labels = batch.labels(task)?;
            let head_binding = head.bind(&mut graph)?;
            let logits = head.forward(&mut graph, features, &head_binding)?;
            let loss = self.loss_node(&mut graph, logits, labels, self.loss_kinds[task])?;
            task_losses.push(graph.value(loss)?[0]);
            let weighted = graph.scalar_mul(loss, weights[task])?;
            total = Some(match total {
                None => weighted,
                Some(t) => graph.add(t, weighted)?,
            });
            head_bindings.push(head_binding);
        }
        let total = total.expect("heads validated nonempty");
        Ok(JointPass {
            graph,
            total,
            task_losses,
            shared_binding,
            head_bindings,
            batch_digest: batch.digest(),
        })
    }

    fn loss_node(
        &self,
        g: &mut Graph,
        logits: Var,
        labels: &[usize],
        kind: LossKind,
    ) -> Result<Var> {
        match kind {
            LossKind::SoftmaxCrossEntropy => {
                let per_sample = g.softmax_cross_entropy(logits, labels)?;
                g.mean(per_sample)
            }
            LossKind::L1 => {
                let shape = g.shape(logits)?.to_vec();
                let (batch, classes) = (shape[0], shape[1]);
                let mut one_hot = vec![0.0; batch * classes];
                for (i, &y) in labels.iter().enumerate() {
                    if y >= classes {
                        return Err(Error::LabelOutOfRange {
                            index: i,
                            label: y,
                            classes,
                        });
                    }
                    one_hot[i * classes + y] = 1.0;
                }
                let target = g.constant(&shape, &one_hot)?;
                let diff = g.l1(logits, target)?;
                g.mean(diff)
            }
        }
    }

    fn check_task(&self, task: usize) -> Result<()> {
        if task >= self.heads.len() {
            return Err(Error::InvalidArg(format!(
                "task {task} out of range for {} tasks",
                self.heads.len()
            )));
        }
        Ok(())
    }

    fn check_input(&self, batch: &MultiTaskBatch) -> Result<()> {
        let got = &batch.x().shape()[1..];
        if got != self.trunk.input_shape() {
            return Err(Error::ShapeMismatch {
                op: "model",
                detail: format!(
                    "batch samples have shape {:?}, model expects {:?}",
                    got,
                    self.trunk.input_shape()
                ),
            });
        }
        Ok(())
    }
}

impl MultitaskObjective for MultitaskModel {
    type Batch = MultiTaskBatch;

    fn task_count(&self) -> usize {
        self.heads.len()
    }

    fn shared_params(&self) -> Vec<(String, &Tensor)> {
        MultitaskModel::shared_params(self)
    }

    fn shared_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        MultitaskModel::shared_params_mut(self)
    }

    fn head_params_mut(&mut self, task: usize) -> Result<Vec<(String, &mut Tensor)>> {
        MultitaskModel::head_params_mut(self, task)
    }

    fn all_params(&self) -> Vec<(String, &Tensor)> {
        self.named_params()
    }

    fn all_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.named_params_mut()
    }

    fn last_shared_layer_span(&self) -> Option<(usize, usize)> {
        MultitaskModel::last_shared_layer_span(self)
    }

    fn task_pass(&self, batch: &MultiTaskBatch, task: usize) -> Result<TaskPass> {
        MultitaskModel::task_pass(self, batch, task)
    }

    fn joint_pass(&self, batch: &MultiTaskBatch, weights: &[f64]) -> Result<JointPass> {
        MultitaskModel::joint_pass(self, batch, weights)
    }
}

fn prefixed<T>(prefix: &str, params: Vec<(String, T)>) -> Vec<(String, T)> {
    params
        .into_iter()
        .map(|(name, t)| (format!("{prefix}.{name}"), t))
        .collect()
}
