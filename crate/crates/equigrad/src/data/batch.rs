//! Mini-batches: one image batch plus per-task label arrays, fingerprinted
//! so trainers can audit that every pass within a step saw the same data.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Label alphabet shared by every image task in this crate.
pub const CLASSES: usize = 10;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over little-endian bytes. Stable across platforms and runs, which
/// is all the batch audit and dataset manifests need.
#[derive(Debug, Clone)]
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub(crate) fn new() -> Self {
        Self(FNV_OFFSET)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub(crate) fn write_f64(&mut self, v: f64) {
        self.write(&v.to_le_bytes());
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

/// One training batch: images `x` of shape [B, ...] and one label array of
/// length B per task. The digest fingerprints the full contents.
#[derive(Debug, Clone)]
pub struct MultiTaskBatch {
    x: Tensor,
    labels: Vec<Vec<usize>>,
    digest: u64,
}

impl MultiTaskBatch {
    pub fn new(x: Tensor, labels: Vec<Vec<usize>>) -> Result<Self> {
        if x.shape().is_empty() || x.shape()[0] == 0 {
            return Err(Error::InvalidArg(format!(
                "batch input must have a positive leading batch dimension, shape was {:?}",
                x.shape()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidArg(
                "batch needs at least one task label array".to_string(),
            ));
        }
        let batch = x.shape()[0];
        for (task, ys) in labels.iter().enumerate() {
            if ys.len() != batch {
                return Err(Error::InvalidArg(format!(
                    "task {task} has {} labels for a batch of {batch}",
                    ys.len()
                )));
            }
            for (i, &y) in ys.iter().enumerate() {
                if y >= CLASSES {
                    return Err(Error::LabelOutOfRange {
                        index: i,
                        label: y,
                        classes: CLASSES,
                    });
                }
            }
        }
        let digest = digest_contents(&x, &labels);
        Ok(Self { x, labels, digest })
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn task_count(&self) -> usize {
        self.labels.len()
    }

    /// Batch size.
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty batches
    }

    pub fn labels(&self, task: usize) -> Result<&[usize]> {
        self.labels.get(task).map(Vec::as_slice).ok_or_else(|| {
            Error::InvalidArg(format!(
                "task {task} out of range for {} tasks",
                self.labels.len()
            ))
        })
    }

    /// Content fingerprint: equal batches hash equal, and any changed pixel,
    /// label, or shape changes the digest.
    pub fn digest(&self) -> u64 {
        self.digest
    }
}

fn digest_contents(x: &Tensor, labels: &[Vec<usize>]) -> u64 {
    let mut h = Fnv1a::new();
    h.write_u64(x.shape().len() as u64);
    for &d in x.shape() {
        h.write_u64(d as u64);
    }
    for &v in x.data() {
        h.write_f64(v);
    }
    h.write_u64(labels.len() as u64);
    for ys in labels {
        for &y in ys {
            h.write_u64(y as u64);
        }
    }
    h.finish()
}
