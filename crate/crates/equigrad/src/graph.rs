//! Reverse-mode autodiff over an append-only op tape.
//!
//! A `Graph` records one forward pass: leaves copy tensor values in, and each
//! op appends a node holding its output and whatever the backward rule needs.
//! `backward` walks the tape once in strict reverse append order, so a node
//! is always visited after every node that consumes it. Graphs are
//! single-use: one forward, one backward, then read gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{shape_string, Error, Result};
use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvDims};
use crate::ops::gemm::dgemm_rowmajor;
use crate::ops::{maxpool2_backward, maxpool2_forward, softmax_ce_backward, softmax_ce_forward};
use crate::tensor::Tensor;

static GRAPH_TAG: AtomicU64 = AtomicU64::new(1);

/// Handle to a node in one specific graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    id: u32,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    ScalarMul(u32, f64),
    MatMul {
        lhs: u32,
        rhs: u32,
        rhs_transposed: bool,
    },
    Conv2d {
        x: u32,
        w: u32,
        dims: ConvDims,
    },
    BiasAdd {
        x: u32,
        b: u32,
    },
    MaxPool2(u32),
    Relu(u32),
    Flatten(u32),
    Reshape(u32),
    Mean(u32),
    Sum(u32),
    SoftmaxCrossEntropy {
        logits: u32,
        labels: Vec<usize>,
    },
    L1(u32, u32),
}

/// Saved activations a backward rule needs beyond input values.
#[derive(Debug)]
enum Aux {
    None,
    /// Winning input index per pooled output element.
    MaxIdx(Vec<u32>),
    /// Softmax probabilities per sample.
    Probs(Vec<f64>),
    /// Concatenated per-sample im2col patch matrices.
    Cols(Vec<f64>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
    shape: Vec<usize>,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
    aux: Aux,
}

pub struct Graph {
    tag: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            tag: GRAPH_TAG.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Registers a leaf whose values are copied from `t`. Gradient flows into
    /// the leaf iff the tensor carries a gradient buffer.
    pub fn leaf(&mut self, t: &Tensor) -> Result<Var> {
        self.push_checked(
            "leaf",
            Op::Leaf,
            t.data().to_vec(),
            t.shape().to_vec(),
            t.requires_grad(),
            Aux::None,
        )
    }

    /// Registers a constant (no gradient) from raw data.
    pub fn constant(&mut self, shape: &[usize], data: &[f64]) -> Result<Var> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(Error::ShapeMismatch {
                op: "constant",
                detail: format!(
                    "shape {} wants {want} elements, got {}",
                    shape_string(shape),
                    data.len()
                ),
            });
        }
        self.push_checked(
            "constant",
            Op::Constant,
            data.to_vec(),
            shape.to_vec(),
            false,
            Aux::None,
        )
    }

    pub fn value(&self, v: Var) -> Result<&[f64]> {
        Ok(&self.node(v)?.value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(&self.node(v)?.shape)
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = self.node(v)?;
        if n.value.len() == 1 {
            Ok(n.value[0])
        } else {
            Err(Error::ShapeMismatch {
                op: "scalar",
                detail: format!("not a scalar: shape {}", shape_string(&n.shape)),
            })
        }
    }

    // ── op builders ──────────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.node(a)?, self.node(b)?);
        same_shape("add", &va.shape, &vb.shape)?;
        let value: Vec<f64> = va.value.iter().zip(&vb.value).map(|(x, y)| x + y).collect();
        let (shape, needs) = (va.shape.clone(), va.needs_grad || vb.needs_grad);
        self.push_checked("add", Op::Add(a.id, b.id), value, shape, needs, Aux::None)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.node(a)?, self.node(b)?);
        same_shape("sub", &va.shape, &vb.shape)?;
        let value: Vec<f64> = va.value.iter().zip(&vb.value).map(|(x, y)| x - y).collect();
        let (shape, needs) = (va.shape.clone(), va.needs_grad || vb.needs_grad);
        self.push_checked("sub", Op::Sub(a.id, b.id), value, shape, needs, Aux::None)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.node(a)?, self.node(b)?);
        same_shape("mul", &va.shape, &vb.shape)?;
        let value: Vec<f64> = va.value.iter().zip(&vb.value).map(|(x, y)| x * y).collect();
        let (shape, needs) = (va.shape.clone(), va.needs_grad || vb.needs_grad);
        self.push_checked("mul", Op::Mul(a.id, b.id), value, shape, needs, Aux::None)
    }

    pub fn scalar_mul(&mut self, a: Var, factor: f64) -> Result<Var> {
        if !factor.is_finite() {
            return Err(Error::InvalidArg(format!(
                "scalar_mul factor must be finite, got {factor}"
            )));
        }
        let va = self.node(a)?;
        let value: Vec<f64> = va.value.iter().map(|x| x * factor).collect();
        let (shape, needs) = (va.shape.clone(), va.needs_grad);
        self.push_checked(
            "scalar_mul",
            Op::ScalarMul(a.id, factor),
            value,
            shape,
            needs,
            Aux::None,
        )
    }

    /// 2-D matrix product; with `rhs_transposed` the right operand is stored
    /// as [n, k] and used as its transpose.
    pub fn matmul(&mut self, a: Var, b: Var, rhs_transposed: bool) -> Result<Var> {
        let (va, vb) = (self.node(a)?, self.node(b)?);
        if va.shape.len() != 2 || vb.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!(
                    "needs two rank-2 operands, got {} and {}",
                    shape_string(&va.shape),
                    shape_string(&vb.shape)
                ),
            });
        }
        let (m, k) = (va.shape[0], va.shape[1]);
        let (bk, n) = if rhs_transposed {
            (vb.shape[1], vb.shape[0])
        } else {
            (vb.shape[0], vb.shape[1])
        };
        if k != bk {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!(
                    "inner dims differ: {} x {}{}",
                    shape_string(&va.shape),
                    shape_string(&vb.shape),
                    if rhs_transposed {
                        " (rhs transposed)"
                    } else {
                        ""
                    }
                ),
            });
        }
        let mut value = vec![0.0; m * n];
        dgemm_rowmajor(
            m,
            k,
            n,
            1.0,
            &va.value,
            false,
            &vb.value,
            rhs_transposed,
            0.0,
            &mut value,
        );
        let needs = va.needs_grad || vb.needs_grad;
        self.push_checked(
            "matmul",
            Op::MatMul {
                lhs: a.id,
                rhs: b.id,
                rhs_transposed,
            },
            value,
            vec![m, n],
            needs,
            Aux::None,
        )
    }

    /// Convolution, stride 1, valid padding. `x` is [batch, in_ch, h, w] and
    /// `w` is [out_ch, in_ch, kh, kw].
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        if x == w {
            return Err(Error::InvalidArg(
                "conv2d input and kernel must be distinct nodes".to_string(),
            ));
        }
        let (vx, vw) = (self.node(x)?, self.node(w)?);
        if vx.shape.len() != 4 || vw.shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "needs rank-4 input and kernel, got {} and {}",
                    shape_string(&vx.shape),
                    shape_string(&vw.shape)
                ),
            });
        }
        let dims = ConvDims {
            batch: vx.shape[0],
            in_ch: vx.shape[1],
            h: vx.shape[2],
            w: vx.shape[3],
            out_ch: vw.shape[0],
            kh: vw.shape[2],
            kw: vw.shape[3],
        };
        if vw.shape[1] != dims.in_ch || dims.kh > dims.h || dims.kw > dims.w || dims.kh == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "kernel {} does not fit input {}",
                    shape_string(&vw.shape),
                    shape_string(&vx.shape)
                ),
            });
        }
        let (value, cols) = conv2d_forward(&vx.value, &vw.value, &dims);
        let shape = vec![dims.batch, dims.out_ch, dims.out_h(), dims.out_w()];
        let needs = vx.needs_grad || vw.needs_grad;
        self.push_checked(
            "conv2d",
            Op::Conv2d {
                x: x.id,
                w: w.id,
                dims,
            },
            value,
            shape,
            needs,
            Aux::Cols(cols),
        )
    }

    /// Adds a vector across rows ([batch, f] + [f]) or across channels
    /// ([batch, c, h, w] + [c]).
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.node(x)?, self.node(b)?);
        let ok = vb.shape.len() == 1
            && match vx.shape.len() {
                2 => vx.shape[1] == vb.shape[0],
                4 => vx.shape[1] == vb.shape[0],
                _ => false,
            };
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "bias_add",
                detail: format!(
                    "cannot add bias {} to {}",
                    shape_string(&vb.shape),
                    shape_string(&vx.shape)
                ),
            });
        }
        let mut value = vx.value.clone();
        let span: usize = vx.shape[2..].iter().product();
        let features = vx.shape[1];
        for row in value.chunks_mut(features * span) {
            for (f, chunk) in row.chunks_mut(span).enumerate() {
                for v in chunk {
                    *v += vb.value[f];
                }
            }
        }
        let (shape, needs) = (vx.shape.clone(), vx.needs_grad || vb.needs_grad);
        self.push_checked(
            "bias_add",
            Op::BiasAdd { x: x.id, b: b.id },
            value,
            shape,
            needs,
            Aux::None,
        )
    }

    /// 2x2 max pooling with stride 2 over [batch, ch, h, w]; h and w must be
    /// even.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let vx = self.node(x)?;
        if vx.shape.len() != 4 || vx.shape[2] % 2 != 0 || vx.shape[3] % 2 != 0 || vx.shape[2] == 0 {
            return Err(Error::ShapeMismatch {
                op: "maxpool2",
                detail: format!(
                    "needs rank-4 input with even spatial dims, got {}",
                    shape_string(&vx.shape)
                ),
            });
        }
        let (b, c, h, w) = (vx.shape[0], vx.shape[1], vx.shape[2], vx.shape[3]);
        let (value, arg) = maxpool2_forward(&vx.value, b, c, h, w);
        let needs = vx.needs_grad;
        self.push_checked(
            "maxpool2",
            Op::MaxPool2(x.id),
            value,
            vec![b, c, h / 2, w / 2],
            needs,
            Aux::MaxIdx(arg),
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let vx = self.node(x)?;
        let value: Vec<f64> = vx.value.iter().map(|v| v.max(0.0)).collect();
        let (shape, needs) = (vx.shape.clone(), vx.needs_grad);
        self.push_checked("relu", Op::Relu(x.id), value, shape, needs, Aux::None)
    }

    /// Collapses all trailing dims: [d0, d1, ...] becomes [d0, d1*...].
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let vx = self.node(x)?;
        if vx.shape.len() < 2 {
            return Err(Error::ShapeMismatch {
                op: "flatten",
                detail: format!("needs rank >= 2, got {}", shape_string(&vx.shape)),
            });
        }
        let shape = vec![vx.shape[0], vx.shape[1..].iter().product()];
        let (value, needs) = (vx.value.clone(), vx.needs_grad);
        self.push_checked("flatten", Op::Flatten(x.id), value, shape, needs, Aux::None)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let vx = self.node(x)?;
        let want: usize = shape.iter().product();
        if want != vx.value.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!(
                    "cannot reshape {} into {}",
                    shape_string(&vx.shape),
                    shape_string(shape)
                ),
            });
        }
        let (value, needs) = (vx.value.clone(), vx.needs_grad);
        self.push_checked(
            "reshape",
            Op::Reshape(x.id),
            value,
            shape.to_vec(),
            needs,
            Aux::None,
        )
    }

    /// Mean over every element, yielding a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vx = self.node(x)?;
        if vx.value.is_empty() {
            return Err(Error::InvalidArg("mean of an empty tensor".to_string()));
        }
        let value = vec![vx.value.iter().sum::<f64>() / vx.value.len() as f64];
        let needs = vx.needs_grad;
        self.push_checked("mean", Op::Mean(x.id), value, Vec::new(), needs, Aux::None)
    }

    /// Sum over every element, yielding a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let vx = self.node(x)?;
        let value = vec![vx.value.iter().sum::<f64>()];
        let needs = vx.needs_grad;
        self.push_checked("sum", Op::Sum(x.id), value, Vec::new(), needs, Aux::None)
    }

    /// Fused softmax + cross entropy from logits ([batch, classes]) against
    /// per-sample class indices. Yields per-sample losses ([batch]).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let vl = self.node(logits)?;
        if vl.shape.len() != 2 || vl.shape[0] == 0 || vl.shape[1] == 0 {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                detail: format!(
                    "needs non-empty [batch, classes] logits, got {}",
                    shape_string(&vl.shape)
                ),
            });
        }
        let (batch, classes) = (vl.shape[0], vl.shape[1]);
        if labels.len() != batch {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                detail: format!("{} labels for batch {batch}", labels.len()),
            });
        }
        for (index, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::LabelOutOfRange {
                    index,
                    label,
                    classes,
                });
            }
        }
        let (value, probs) = softmax_ce_forward(&vl.value, labels, classes);
        let needs = vl.needs_grad;
        self.push_checked(
            "softmax_cross_entropy",
            Op::SoftmaxCrossEntropy {
                logits: logits.id,
                labels: labels.to_vec(),
            },
            value,
            vec![batch],
            needs,
            Aux::Probs(probs),
        )
    }

    /// Elementwise absolute difference |a - b|.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.node(a)?, self.node(b)?);
        same_shape("l1", &va.shape, &vb.shape)?;
        let value: Vec<f64> = va
            .value
            .iter()
            .zip(&vb.value)
            .map(|(x, y)| (x - y).abs())
            .collect();
        let (shape, needs) = (va.shape.clone(), va.needs_grad || vb.needs_grad);
        self.push_checked("l1", Op::L1(a.id, b.id), value, shape, needs, Aux::None)
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Accumulates d(root)/d(node) into every gradient-bearing node reachable
    /// from `root`, walking the tape once in reverse append order. The graph
    /// is consumed: a second backward is rejected.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_node = self.node(root)?;
        if root_node.value.len() != 1 {
            return Err(Error::NonScalarRoot {
                shape: shape_string(&root_node.shape),
            });
        }
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        self.consumed = true;
        self.nodes[root.id as usize].grad = Some(vec![1.0]);

        for id in (0..=root.id as usize).rev() {
            let (before, rest) = self.nodes.split_at_mut(id);
            let node = &mut rest[0];
            if !node.needs_grad || node.grad.is_none() {
                continue;
            }
            let g = node.grad.as_ref().expect("checked above");
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::Add(a, b) => {
                    acc_scaled(before, *a, g, 1.0);
                    acc_scaled(before, *b, g, 1.0);
                }
                Op::Sub(a, b) => {
                    acc_scaled(before, *a, g, 1.0);
                    acc_scaled(before, *b, g, -1.0);
                }
                Op::Mul(a, b) => {
                    if a == b {
                        let n = &mut before[*a as usize];
                        if n.needs_grad {
                            let Node { value, grad, .. } = n;
                            let buf = grad.get_or_insert_with(|| vec![0.0; value.len()]);
                            for ((o, v), gv) in buf.iter_mut().zip(value.iter()).zip(g) {
                                *o += 2.0 * v * gv;
                            }
                        }
                    } else {
                        let (na, nb) = pair_mut(before, *a as usize, *b as usize);
                        if na.needs_grad {
                            let buf = na.grad.get_or_insert_with(|| vec![0.0; na.value.len()]);
                            for ((o, v), gv) in buf.iter_mut().zip(&nb.value).zip(g) {
                                *o += v * gv;
                            }
                        }
                        if nb.needs_grad {
                            let buf = nb.grad.get_or_insert_with(|| vec![0.0; nb.value.len()]);
                            for ((o, v), gv) in buf.iter_mut().zip(&na.value).zip(g) {
                                *o += v * gv;
                            }
                        }
                    }
                }
                Op::ScalarMul(a, factor) => acc_scaled(before, *a, g, *factor),
                Op::MatMul {
                    lhs,
                    rhs,
                    rhs_transposed,
                } => {
                    let (m, n) = (node.shape[0], node.shape[1]);
                    let transposed = *rhs_transposed;
                    if lhs == rhs {
                        // y = A * A (square A): dA = g * A^T + A^T * g.
                        let na = &mut before[*lhs as usize];
                        if na.needs_grad {
                            let Node { value, grad, .. } = na;
                            let buf = grad.get_or_insert_with(|| vec![0.0; value.len()]);
                            let k = m;
                            if transposed {
                                dgemm_rowmajor(m, n, k, 1.0, g, false, value, false, 1.0, buf);
                                dgemm_rowmajor(n, m, k, 1.0, g, true, value, false, 1.0, buf);
                            } else {
                                dgemm_rowmajor(m, n, k, 1.0, g, false, value, true, 1.0, buf);
                                dgemm_rowmajor(k, m, n, 1.0, value, true, g, false, 1.0, buf);
                            }
                        }
                        continue;
                    }
                    let (la, lb) = pair_mut(before, *lhs as usize, *rhs as usize);
                    let k = la.shape[1];
                    if la.needs_grad {
                        let buf = la.grad.get_or_insert_with(|| vec![0.0; la.value.len()]);
                        if transposed {
                            // dA += g * B, where storage of B is [n, k]
                            dgemm_rowmajor(m, n, k, 1.0, g, false, &lb.value, false, 1.0, buf);
                        } else {
                            // dA += g * B^T, storage [k, n] used transposed
                            dgemm_rowmajor(m, n, k, 1.0, g, false, &lb.value, true, 1.0, buf);
                        }
                    }
                    if lb.needs_grad {
                        let buf = lb.grad.get_or_insert_with(|| vec![0.0; lb.value.len()]);
                        if transposed {
                            // dB += g^T * A  ([n, m] x [m, k])
                            dgemm_rowmajor(n, m, k, 1.0, g, true, &la.value, false, 1.0, buf);
                        } else {
                            // dB += A^T * g  ([k, m] x [m, n])
                            dgemm_rowmajor(k, m, n, 1.0, &la.value, true, g, false, 1.0, buf);
                        }
                    }
                }
                Op::Conv2d { x, w, dims } => {
                    let cols = match &node.aux {
                        Aux::Cols(c) => c,
                        _ => unreachable!("conv node always carries patch matrix"),
                    };
                    let (nx, nw) = pair_mut(before, *x as usize, *w as usize);
                    let gx = if nx.needs_grad {
                        Some(
                            nx.grad
                                .get_or_insert_with(|| vec![0.0; nx.value.len()])
                                .as_mut_slice(),
                        )
                    } else {
                        None
                    };
                    let gw = if nw.needs_grad {
                        Some(
                            nw.grad
                                .get_or_insert_with(|| vec![0.0; nw.value.len()])
                                .as_mut_slice(),
                        )
                    } else {
                        None
                    };
                    conv2d_backward(g, &nw.value, cols, dims, gx, gw);
                }
                Op::BiasAdd { x, b } => {
                    acc_scaled(before, *x, g, 1.0);
                    let nb = &mut before[*b as usize];
                    if nb.needs_grad {
                        let features = nb.value.len();
                        let span = node.value.len() / node.shape[0] / features;
                        let buf = nb.grad.get_or_insert_with(|| vec![0.0; features]);
                        for row in g.chunks(features * span) {
                            for (f, chunk) in row.chunks(span).enumerate() {
                                buf[f] += chunk.iter().sum::<f64>();
                            }
                        }
                    }
                }
                Op::MaxPool2(x) => {
                    let arg = match &node.aux {
                        Aux::MaxIdx(a) => a,
                        _ => unreachable!("pool node always carries argmax"),
                    };
                    let nx = &mut before[*x as usize];
                    if nx.needs_grad {
                        let buf = nx.grad.get_or_insert_with(|| vec![0.0; nx.value.len()]);
                        maxpool2_backward(g, arg, buf);
                    }
                }
                Op::Relu(x) => {
                    let nx = &mut before[*x as usize];
                    if nx.needs_grad {
                        let Node { value: out, .. } = &*node;
                        let buf = nx.grad.get_or_insert_with(|| vec![0.0; nx.value.len()]);
                        for ((o, gv), v) in buf.iter_mut().zip(g).zip(out) {
                            if *v > 0.0 {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::Flatten(x) | Op::Reshape(x) => acc_scaled(before, *x, g, 1.0),
                Op::Mean(x) => {
                    let nx = &mut before[*x as usize];
                    if nx.needs_grad {
                        let seed = g[0] / nx.value.len() as f64;
                        let buf = nx.grad.get_or_insert_with(|| vec![0.0; nx.value.len()]);
                        for o in buf.iter_mut() {
                            *o += seed;
                        }
                    }
                }
                Op::Sum(x) => {
                    let nx = &mut before[*x as usize];
                    if nx.needs_grad {
                        let seed = g[0];
                        let buf = nx.grad.get_or_insert_with(|| vec![0.0; nx.value.len()]);
                        for o in buf.iter_mut() {
                            *o += seed;
                        }
                    }
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let probs = match &node.aux {
                        Aux::Probs(p) => p,
                        _ => unreachable!("softmax node always carries probabilities"),
                    };
                    let nl = &mut before[*logits as usize];
                    if nl.needs_grad {
                        let classes = nl.shape[1];
                        let buf = nl.grad.get_or_insert_with(|| vec![0.0; nl.value.len()]);
                        softmax_ce_backward(g, probs, labels, classes, buf);
                    }
                }
                Op::L1(a, b) => {
                    if a == b {
                        // |x - x| has subgradient zero everywhere.
                        continue;
                    }
                    let (na, nb) = pair_mut(before, *a as usize, *b as usize);
                    // Subgradient: sign of the difference, zero at ties.
                    let signs: Vec<f64> = na
                        .value
                        .iter()
                        .zip(&nb.value)
                        .map(|(x, y)| {
                            if x > y {
                                1.0
                            } else if x < y {
                                -1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    if na.needs_grad {
                        let buf = na.grad.get_or_insert_with(|| vec![0.0; na.value.len()]);
                        for ((o, s), gv) in buf.iter_mut().zip(&signs).zip(g) {
                            *o += s * gv;
                        }
                    }
                    if nb.needs_grad {
                        let buf = nb.grad.get_or_insert_with(|| vec![0.0; nb.value.len()]);
                        for ((o, s), gv) in buf.iter_mut().zip(&signs).zip(g) {
                            *o -= s * gv;
                        }
                    }
                }
            }
        }

        // Unreached gradient-bearing leaves read back as zero.
        for node in &mut self.nodes {
            if node.needs_grad && node.grad.is_none() {
                if let Op::Leaf = node.op {
                    node.grad = Some(vec![0.0; node.value.len()]);
                }
            }
        }
        Ok(())
    }

    /// Gradient of the backward root with respect to `v`. Only valid after
    /// `backward`.
    pub fn grad(&self, v: Var) -> Result<&[f64]> {
        if !self.consumed {
            return Err(Error::MissingGrad {
                what: "graph before backward".to_string(),
            });
        }
        let n = self.node(v)?;
        if !n.needs_grad {
            return Err(Error::MissingGrad {
                what: "node without gradient flow".to_string(),
            });
        }
        n.grad.as_deref().ok_or_else(|| Error::MissingGrad {
            what: "node not reached by backward".to_string(),
        })
    }

    /// Adds the gradient at `v` into the tensor's gradient buffer.
    pub fn accumulate_grad_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        t.accumulate_grad(self.grad(v)?)
    }

    // ── internals ────────────────────────────────────────────────────────

    fn node(&self, v: Var) -> Result<&Node> {
        if v.graph != self.tag {
            return Err(Error::ForeignVar);
        }
        Ok(&self.nodes[v.id as usize])
    }

    fn push_checked(
        &mut self,
        op_name: &'static str,
        op: Op,
        value: Vec<f64>,
        shape: Vec<usize>,
        needs_grad: bool,
        aux: Aux,
    ) -> Result<Var> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let id = u32::try_from(self.nodes.len())
            .map_err(|_| Error::InvalidArg("graph node limit exceeded".to_string()))?;
        self.nodes.push(Node {
            op,
            value,
            shape,
            needs_grad,
            grad: None,
            aux,
        });
        Ok(Var {
            graph: self.tag,
            id,
        })
    }
}

/// Adds `scale * g` into the gradient of node `id` (no-op when that node does
/// not take gradients).
fn acc_scaled(nodes: &mut [Node], id: u32, g: &[f64], scale: f64) {
    let n = &mut nodes[id as usize];
    if !n.needs_grad {
        return;
    }
    let buf = n.grad.get_or_insert_with(|| vec![0.0; n.value.len()]);
    if scale == 1.0 {
        for (o, gv) in buf.iter_mut().zip(g) {
            *o += gv;
        }
    } else {
        for (o, gv) in buf.iter_mut().zip(g) {
            *o += scale * gv;
        }
    }
}

/// Mutable references to two distinct slice elements.
fn pair_mut(nodes: &mut [Node], i: usize, j: usize) -> (&mut Node, &mut Node) {
    assert_ne!(i, j);
    if i < j {
        let (lo, hi) = nodes.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = nodes.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            detail: format!("{} vs {}", shape_string(a), shape_string(b)),
        })
    }
}
