//! Standard layers over the graph ops, He-uniform init, and plain SGD.

use rand::Rng;

use crate::error::{shape_string, Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// One layer of a feedforward stack. Parameterized layers own their tensors;
/// the rest are shape transforms.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    Conv2d {
        weight: Tensor,
        bias: Tensor,
    },
    Relu,
    /// 2x2 max pooling, stride 2.
    MaxPool2,
    Flatten,
}

/// He-uniform draw: U(-b, b) with b = sqrt(6 / fan_in), filled in row-major
/// index order so a seeded generator reproduces the same weights.
fn he_uniform<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data)
        .expect("shape product matches draw count")
        .with_grad()
}

impl Layer {
    /// Fully connected layer; weight is [out, in], bias starts at zero.
    pub fn dense<R: Rng>(input_dim: usize, output_dim: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArg("dense dims must be positive".to_string()));
        }
        Ok(Layer::Dense {
            weight: he_uniform(vec![output_dim, input_dim], input_dim, rng),
            bias: Tensor::zeros(vec![output_dim]).with_grad(),
        })
    }

    /// Convolution layer; weight is [out_ch, in_ch, k, k], bias starts at
    /// zero. Fan-in is in_ch * k * k.
    pub fn conv2d<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(Error::InvalidArg("conv dims must be positive".to_string()));
        }
        Ok(Layer::Conv2d {
            weight: he_uniform(
                vec![out_channels, in_channels, kernel, kernel],
                in_channels * kernel * kernel,
                rng,
            ),
            bias: Tensor::zeros(vec![out_channels]).with_grad(),
        })
    }

    /// Per-sample output shape for a given per-sample input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { weight, .. } => {
                let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
                if input != [in_dim] {
                    return Err(Error::ShapeMismatch {
                        op: "dense",
                        detail: format!("expects input [{in_dim}], got {}", shape_string(input)),
                    });
                }
                Ok(vec![out_dim])
            }
            Layer::Conv2d { weight, .. } => {
                let ws = weight.shape();
                let (oc, ic, k) = (ws[0], ws[1], ws[2]);
                if input.len() != 3 || input[0] != ic || input[1] < k || input[2] < k {
                    return Err(Error::ShapeMismatch {
                        op: "conv2d",
                        detail: format!(
                            "kernel {} cannot consume input {}",
                            shape_string(ws),
                            shape_string(input)
                        ),
                    });
                }
                Ok(vec![oc, input[1] - k + 1, input[2] - k + 1])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2 => {
                if input.len() != 3
                    || !input[1].is_multiple_of(2)
                    || !input[2].is_multiple_of(2)
                    || input[1] == 0
                {
                    return Err(Error::ShapeMismatch {
                        op: "maxpool2",
                        detail: format!(
                            "needs [ch, even, even] input, got {}",
                            shape_string(input)
                        ),
                    });
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias } => vec![weight, bias],
            _ => Vec::new(),
        }
    }
}

/// A validated stack of layers. Construction checks that adjacent shapes
/// compose for the declared per-sample input shape, so forward passes can
/// only fail on batch-level mistakes.
#[derive(Debug, Clone)]
pub struct Sequential {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

impl Sequential {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (index, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::ShapeMismatch {
                    op: "sequential",
                    detail: format!("layer {index}: {e}"),
                })?;
        }
        Ok(Self {
            layers,
            input_shape,
            output_shape: shape,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Parameters in layer order, named `{layer_index}.weight` / `.bias`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let names = ["weight", "bias"];
            for (t, n) in layer.params().into_iter().zip(names) {
                out.push((format!("{i}.{n}"), t));
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let names = ["weight", "bias"];
            for (t, n) in layer.params_mut().into_iter().zip(names) {
                out.push((format!("{i}.{n}"), t));
            }
        }
        out
    }

    /// Index of the last parameterized layer's first tensor within the
    /// `named_params` order, with how many tensors it owns. Diagnostics use
    /// this to take gradient norms at the deepest shared layer.
    pub fn last_param_layer_span(&self) -> Option<(usize, usize)> {
        let mut offset = 0;
        let mut found = None;
        for layer in &self.layers {
            let n = layer.params().len();
            if n > 0 {
                found = Some((offset, n));
            }
            offset += n;
        }
        found
    }

    /// Registers every parameter as a graph leaf, in `named_params` order.
    pub fn bind(&self, g: &mut Graph) -> Result<Vec<Var>> {
        self.named_params()
            .into_iter()
            .map(|(_, t)| g.leaf(t))
            .collect()
    }

    /// Runs the stack on a batched input ([batch, per-sample shape...]),
    /// consuming parameter vars from `binding` in order.
    pub fn forward(&self, g: &mut Graph, x: Var, binding: &[Var]) -> Result<Var> {
        let mut vars = binding.iter().copied();
        let mut next = |what: &str| {
            vars.next()
                .ok_or_else(|| Error::InvalidArg(format!("binding too short: missing {what}")))
        };
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Dense { .. } => {
                    let w = next("dense weight")?;
                    let b = next("dense bias")?;
                    let y = g.matmul(h, w, true)?;
                    g.bias_add(y, b)?
                }
                Layer::Conv2d { .. } => {
                    let w = next("conv weight")?;
                    let b = next("conv bias")?;
                    let y = g.conv2d(h, w)?;
                    g.bias_add(y, b)?
                }
                Layer::Relu => g.relu(h)?,
                Layer::MaxPool2 => g.maxpool2(h)?,
                Layer::Flatten => g.flatten(h)?,
            };
        }
        Ok(h)
    }

    /// Accumulates the gradients recorded in `binding` into the owned
    /// parameter tensors. Call after `Graph::backward`.
    pub fn pull_grads(&mut self, g: &Graph, binding: &[Var]) -> Result<()> {
        for ((name, t), var) in self.named_params_mut().into_iter().zip(binding) {
            g.accumulate_grad_into(*var, t).map_err(|e| Error::Param {
                name,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.named_params_mut() {
            t.zero_grad();
        }
    }
}

/// One plain SGD update, p <- p - step_size * grad, applied in place.
/// Every parameter must carry a gradient; the first one that does not is
/// named in the error. Parameters are checked to stay finite.
pub fn sgd_step(params: &mut [(String, &mut Tensor)], step_size: f64) -> Result<()> {
    if !step_size.is_finite() || step_size <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "sgd step size must be positive and finite, got {step_size}"
        )));
    }
    for (name, t) in params.iter_mut() {
        let grad = match t.grad() {
            Some(g) => g.to_vec(),
            None => {
                return Err(Error::Param {
                    name: name.clone(),
                    reason: "no gradient for sgd update".to_string(),
                })
            }
        };
        for (d, g) in t.data_mut().iter_mut().zip(&grad) {
            *d -= step_size * g;
        }
        if !t.data().iter().all(|v| v.is_finite()) {
            return Err(Error::Param {
                name: name.clone(),
                reason: "non-finite after sgd update".to_string(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn dense_init_shapes_and_zero_bias() {
        let layer = Layer::dense(4, 3, &mut rng(7)).unwrap();
        let Layer::Dense { weight, bias } = &layer else {
            panic!()
        };
        assert_eq!(weight.shape(), &[3, 4]);
        assert_eq!(bias.shape(), &[3]);
        assert!(bias.data().iter().all(|&b| b == 0.0));
        assert!(weight.requires_grad() && bias.requires_grad());
    }

    #[test]
    fn he_uniform_respects_fan_in_bound() {
        // fan_in = 100: every |w| <= sqrt(6/100) = 0.2449489742783178.
        let bound = 0.2449489742783178_f64;
        let layer = Layer::dense(100, 50, &mut rng(3)).unwrap();
        let Layer::Dense { weight, .. } = &layer else {
            panic!()
        };
        assert!(weight.data().iter().all(|w| w.abs() <= bound));
        assert!((bound - (6.0_f64 / 100.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = Layer::dense(8, 8, &mut rng(42)).unwrap();
        let b = Layer::dense(8, 8, &mut rng(42)).unwrap();
        let c = Layer::dense(8, 8, &mut rng(43)).unwrap();
        let (Layer::Dense { weight: wa, .. }, Layer::Dense { weight: wb, .. }) = (&a, &b) else {
            panic!()
        };
        assert_eq!(wa.data(), wb.data());
        let Layer::Dense { weight: wc, .. } = &c else {
            panic!()
        };
        assert_ne!(wa.data(), wc.data());
    }

    #[test]
    fn sequential_rejects_bad_composition_naming_the_layer() {
        let err = Sequential::new(
            vec![3, 9, 9],
            vec![
                Layer::conv2d(3, 4, 3, &mut rng(0)).unwrap(), // -> [4, 7, 7]
                Layer::MaxPool2,                              // 7 is odd: boom
            ],
        )
        .unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn sequential_tracks_output_shape() {
        let s = Sequential::new(
            vec![1, 8, 8],
            vec![
                Layer::conv2d(1, 2, 3, &mut rng(1)).unwrap(), // [2, 6, 6]
                Layer::Relu,
                Layer::MaxPool2, // [2, 3, 3]
                Layer::Flatten,  // [18]
            ],
        )
        .unwrap();
        assert_eq!(s.output_shape(), &[18]);
    }

    #[test]
    fn dense_forward_matches_hand_computation() {
        let mut s =
            Sequential::new(vec![2], vec![Layer::dense(2, 1, &mut rng(0)).unwrap()]).unwrap();
        // Overwrite the random init with fixed values.
        {
            let mut params = s.named_params_mut();
            params[0].1.data_mut().copy_from_slice(&[0.5, -0.25]);
            params[1].1.data_mut().copy_from_slice(&[0.125]);
        }
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let xv = g.leaf(&x).unwrap();
        let binding = s.bind(&mut g).unwrap();
        let y = s.forward(&mut g, xv, &binding).unwrap();
        // 1*0.5 + 2*(-0.25) + 0.125 = 0.125
        assert_eq!(g.value(y).unwrap(), &[0.125]);
    }

    #[test]
    fn sgd_applies_fixed_update() {
        let mut w = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
        w.accumulate_grad(&[0.5, 1.0]).unwrap();
        let mut params = vec![("w".to_string(), &mut w)];
        sgd_step(&mut params, 0.1).unwrap();
        assert_eq!(w.data(), &[1.0 - 0.1 * 0.5, 2.0 - 0.1 * 1.0]);
    }

    #[test]
    fn sgd_missing_grad_names_the_parameter() {
        let mut w = Tensor::zeros(vec![2]);
        let mut params = vec![("trunk.0.weight".to_string(), &mut w)];
        let err = sgd_step(&mut params, 0.1).unwrap_err();
        assert!(err.to_string().contains("trunk.0.weight"), "{err}");
    }

    #[test]
    fn sgd_rejects_bad_step_sizes() {
        let mut w = Tensor::zeros(vec![1]).with_grad();
        assert!(sgd_step(&mut [("w".to_string(), &mut w)], 0.0).is_err());
        assert!(sgd_step(&mut [("w".to_string(), &mut w)], -0.1).is_err());
        assert!(sgd_step(&mut [("w".to_string(), &mut w)], f64::NAN).is_err());
    }

    #[test]
    fn last_param_layer_span_skips_shape_transforms() {
        let s = Sequential::new(
            vec![1, 8, 8],
            vec![
                Layer::conv2d(1, 2, 3, &mut rng(1)).unwrap(),
                Layer::Relu,
                Layer::conv2d(2, 3, 3, &mut rng(2)).unwrap(),
                Layer::MaxPool2,
                Layer::Flatten,
            ],
        )
        .unwrap();
        // Params: conv0 (0, 1), conv2 (2, 3); last span points at conv2.
        assert_eq!(s.last_param_layer_span(), Some((2, 2)));
    }
}
