//! Small fixtures shared by unit tests: a miniature convolutional model and
//! seeded random batches for it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::MultiTaskBatch;
use crate::layers::{Layer, Sequential};
use crate::model::{LossKind, MultitaskModel};
use crate::objective::MultitaskObjective;
use crate::tensor::Tensor;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A scaled-down version of the reference architecture: one conv block over
/// 8x8 inputs (18 trunk features) and a single dense layer per head.
pub(crate) fn tiny_model(tasks: usize, seed: u64) -> MultitaskModel {
    let mut r = rng(seed);
    let trunk = Sequential::new(
        vec![1, 8, 8],
        vec![
            Layer::conv2d(1, 2, 3, &mut r).unwrap(),
            Layer::Relu,
            Layer::MaxPool2,
            Layer::Flatten,
        ],
    )
    .unwrap();
    let mut heads = Vec::with_capacity(tasks);
    for _ in 0..tasks {
        heads.push(Sequential::new(vec![18], vec![Layer::dense(18, 10, &mut r).unwrap()]).unwrap());
    }
    let kinds = vec![LossKind::SoftmaxCrossEntropy; tasks];
    MultitaskModel::new(trunk, heads, kinds).unwrap()
}

/// A random batch shaped for `tiny_model`, with independent labels per task.
pub(crate) fn tiny_batch(tasks: usize, batch: usize, seed: u64) -> MultiTaskBatch {
    let mut r = rng(seed);
    let mut pixels = Vec::with_capacity(batch * 64);
    for _ in 0..batch * 64 {
        pixels.push(r.random_range(0.0..1.0));
    }
    let x = Tensor::new(vec![batch, 1, 8, 8], pixels).unwrap();
    let labels = (0..tasks)
        .map(|_| (0..batch).map(|_| r.random_range(0..10)).collect())
        .collect();
    MultiTaskBatch::new(x, labels).unwrap()
}

/// Every named parameter's values as raw bits, for exact comparisons.
pub(crate) fn params_bits<O: MultitaskObjective>(obj: &O) -> Vec<(String, Vec<u64>)> {
    obj.all_params()
        .into_iter()
        .map(|(name, t)| (name, t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}
