//! Dense row-major f64 tensors.
//!
//! A `Tensor` owns its values and, when it participates in training, a
//! gradient buffer of the same shape. Graphs copy tensor values in at leaf
//! registration, so a tensor can be mutated freely between forward passes
//! without invalidating an existing graph.

use crate::error::{shape_string, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from row-major data. The element count must match the
    /// shape product (an empty shape denotes a scalar, product 1).
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: format!(
                    "shape {} wants {expect} elements, got {}",
                    shape_string(&shape),
                    data.len()
                ),
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            grad: None,
        }
    }

    /// Enables gradient accumulation for this tensor (grad starts at zero).
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Gradient buffer, present only after `with_grad`.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::ShapeMismatch {
                op: "item",
                detail: format!("not a scalar: shape {}", shape_string(&self.shape)),
            })
        }
    }

    /// Adds `delta` into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        let n = self.data.len();
        let grad = self.grad.as_mut().ok_or(Error::MissingGrad {
            what: "tensor without gradient buffer".to_string(),
        })?;
        if delta.len() != n {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad",
                detail: format!("gradient length {} vs tensor length {n}", delta.len()),
            });
        }
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Resets the gradient buffer to zero. No-op when grads are disabled.
    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }
}

/// Zeroes every gradient buffer in the list. Idempotent; empty lists are fine.
pub fn zero_grads<'a, I>(params: I)
where
    I: IntoIterator<Item = &'a mut Tensor>,
{
    for p in params {
        p.zero_grad();
    }
}
