//! Analytic quadratic task family: T tasks over one shared parameter vector
//! theta, where task i costs 1/2 c_i ||theta - mu_i||^2. Losses, gradients,
//! and whole training trajectories have closed forms, so these tasks serve
//! as exact oracles for the training procedures.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::objective::{JointPass, MultitaskObjective, TaskPass};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct QuadraticTaskSet {
    curvatures: Vec<f64>,
    optima: Vec<Vec<f64>>,
    theta: Tensor,
}

impl QuadraticTaskSet {
    pub fn new(curvatures: Vec<f64>, optima: Vec<Vec<f64>>, theta: Vec<f64>) -> Result<Self> {
        if curvatures.is_empty() {
            return Err(Error::InvalidArg(
                "quadratic task set needs at least one task".to_string(),
            ));
        }
        if optima.len() != curvatures.len() {
            return Err(Error::InvalidArg(format!(
                "{} optima for {} curvatures",
                optima.len(),
                curvatures.len()
            )));
        }
        if theta.is_empty() {
            return Err(Error::InvalidArg(
                "parameter dimension must be positive".to_string(),
            ));
        }
        if let Some(c) = curvatures.iter().find(|c| !c.is_finite() || **c <= 0.0) {
            return Err(Error::InvalidArg(format!(
                "curvatures must be positive and finite, got {c}"
            )));
        }
        for (task, mu) in optima.iter().enumerate() {
            if mu.len() != theta.len() {
                return Err(Error::InvalidArg(format!(
                    "optimum {task} has dimension {} for parameter dimension {}",
                    mu.len(),
                    theta.len()
                )));
            }
        }
        let dim = theta.len();
        Ok(Self {
            curvatures,
            optima,
            theta: Tensor::new(vec![dim], theta)?.with_grad(),
        })
    }

    pub fn theta(&self) -> &[f64] {
        self.theta.data()
    }

    pub fn set_theta(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.theta.len() {
            return Err(Error::InvalidArg(format!(
                "{} values for parameter dimension {}",
                values.len(),
                self.theta.len()
            )));
        }
        self.theta.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn curvatures(&self) -> &[f64] {
        &self.curvatures
    }

    /// Closed-form loss and gradient of task `task` at an arbitrary point:
    /// loss = 1/2 c ||theta - mu||^2, grad = c (theta - mu).
    pub fn loss_and_grad(&self, theta: &[f64], task: usize) -> Result<(f64, Vec<f64>)> {
        self.check_task(task)?;
        if theta.len() != self.theta.len() {
            return Err(Error::InvalidArg(format!(
                "point has dimension {} for parameter dimension {}",
                theta.len(),
                self.theta.len()
            )));
        }
        let c = self.curvatures[task];
        let mu = &self.optima[task];
        let grad: Vec<f64> = theta.iter().zip(mu).map(|(t, m)| c * (t - m)).collect();
        let loss = 0.5
            * c
            * theta
                .iter()
                .zip(mu)
                .map(|(t, m)| (t - m) * (t - m))
                .sum::<f64>();
        Ok((loss, grad))
    }

    /// Builds 1/2 c ||theta - mu||^2 out of graph ops, so gradients flow
    /// through the same backward machinery as every other objective.
    pub fn loss_node(&self, g: &mut Graph, theta: Var, task: usize) -> Result<Var> {
        self.check_task(task)?;
        let mu = g.constant(&[self.theta.len()], &self.optima[task])?;
        let diff = g.sub(theta, mu)?;
        let squared = g.mul(diff, diff)?;
        let total = g.sum(squared)?;
        g.scalar_mul(total, 0.5 * self.curvatures[task])
    }

    fn check_task(&self, task: usize) -> Result<()> {
        if task >= self.curvatures.len() {
            return Err(Error::InvalidArg(format!(
                "task {task} out of range for {} tasks",
                self.curvatures.len()
            )));
        }
        Ok(())
    }
}

impl MultitaskObjective for QuadraticTaskSet {
    /// The tasks carry their own state; there is no per-step data.
    type Batch = ();

    fn task_count(&self) -> usize {
        self.curvatures.len()
    }

    fn shared_params(&self) -> Vec<(String, &Tensor)> {
        vec![("theta".to_string(), &self.theta)]
    }

    fn shared_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("theta".to_string(), &mut self.theta)]
    }

    fn head_params_mut(&mut self, task: usize) -> Result<Vec<(String, &mut Tensor)>> {
        self.check_task(task)?;
        Ok(Vec::new())
    }

    fn all_params(&self) -> Vec<(String, &Tensor)> {
        self.shared_params()
    }

    fn all_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.shared_params_mut()
    }

    fn last_shared_layer_span(&self) -> Option<(usize, usize)> {
        Some((0, 1))
    }

    fn task_pass(&self, _batch: &(), task: usize) -> Result<TaskPass> {
        let mut graph = Graph::new();
        let theta = graph.leaf(&self.theta)?;
        let loss = self.loss_node(&mut graph, theta, task)?;
        let loss_value = graph.value(loss)?[0];
        Ok(TaskPass {
            graph,
            loss,
            loss_value,
            shared_binding: vec![theta],
            head_binding: Vec::new(),
            batch_digest: 0, // no data to fingerprint
        })
    }

    fn joint_pass(&self, _batch: &(), weights: &[f64]) -> Result<JointPass> {
        if weights.len() != self.curvatures.len() {
            return Err(Error::InvalidArg(format!(
                "{} loss weights for {} tasks",
                weights.len(),
                self.curvatures.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidArg(format!(
                "loss weights must be finite and nonnegative, got {w}"
            )));
        }
        let mut graph = Graph::new();
        let theta = graph.leaf(&self.theta)?;
        let mut task_losses = Vec::with_capacity(self.curvatures.len());
        let mut total: Option<Var> = None;
        for (task, &weight) in weights.iter().enumerate() {
            let loss = self.loss_node(&mut graph, theta, task)?;
            task_losses.push(graph.value(loss)?[0]);
            let weighted = graph.scalar_mul(loss, weight)?;
            total = Some(match total {
                None => weighted,
                Some(t) => graph.add(t, weighted)?,
            });
        }
        let total = total.expect("tasks validated nonempty");
        Ok(JointPass {
            graph,
            total,
            task_losses,
            shared_binding: vec![theta],
            head_bindings: vec![Vec::new(); self.curvatures.len()],
            batch_digest: 0,
        })
    }
}
