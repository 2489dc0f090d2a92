//! Two-task overlay images: each sample composes one image from source A at
//! the top-left corner and one from source B at the bottom-right corner of a
//! 36x36 canvas, overlaps resolved by per-pixel max. The sample carries both
//! source labels, one per task.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::batch::{Fnv1a, MultiTaskBatch, CLASSES};
use crate::data::idx::IdxFile;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Canvas side length for composed samples.
pub const CANVAS_SIDE: usize = 36;

/// Cap on redraws when a freshly composed sample collides with a digest
/// already assigned to another split.
const MAX_REDRAWS: usize = 10_000;

/// A labeled single-channel image collection, all images the same size with
/// pixels in [0, 1].
#[derive(Debug, Clone)]
pub struct LabeledImages {
    height: usize,
    width: usize,
    images: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl LabeledImages {
    pub fn new(
        height: usize,
        width: usize,
        images: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArg("image source is empty".to_string()));
        }
        if images.len() != labels.len() {
            return Err(Error::InvalidArg(format!(
                "{} images with {} labels",
                images.len(),
                labels.len()
            )));
        }
        for (i, img) in images.iter().enumerate() {
            if img.len() != height * width {
                return Err(Error::InvalidArg(format!(
                    "image {i} has {} pixels, expected {height}x{width}",
                    img.len()
                )));
            }
            if img.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidArg(format!(
                    "image {i} has pixels outside [0, 1]"
                )));
            }
        }
        for (i, &label) in labels.iter().enumerate() {
            if label >= CLASSES {
                return Err(Error::LabelOutOfRange {
                    index: i,
                    label,
                    classes: CLASSES,
                });
            }
        }
        Ok(Self {
            height,
            width,
            images,
            labels,
        })
    }

    /// Builds a source from a parsed IDX image file and its label file.
    pub fn from_idx(images: &IdxFile, labels: &IdxFile) -> Result<Self> {
        let (n, h, w, pixels) = images.images()?;
        let labels = labels.labels()?;
        if labels.len() != n {
            return Err(Error::InvalidArg(format!(
                "{n} images with {} labels",
                labels.len()
            )));
        }
        let images = pixels.chunks(h * w).map(|c| c.to_vec()).collect();
        Self::new(h, w, images, labels)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Content digest over dimensions, pixels, and labels; identifies the
    /// source in cache manifests.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(self.height as u64);
        h.write_u64(self.width as u64);
        h.write_u64(self.images.len() as u64);
        for img in &self.images {
            for &p in img {
                h.write_f64(p);
            }
        }
        for &l in &self.labels {
            h.write_u64(l as u64);
        }
        h.finish()
    }
}

/// Composes two equally sized images onto a canvas: `a` anchored at the
/// top-left corner, `b` at the bottom-right, overlapping pixels combined by
/// max. The result is rounded to f32 precision so that freshly composed
/// samples and cache-loaded ones are bit-identical.
pub fn compose_overlay(
    a: &[f64],
    b: &[f64],
    source: (usize, usize),
    canvas: (usize, usize),
) -> Result<Vec<f64>> {
    let (sh, sw) = source;
    let (ch, cw) = canvas;
    if a.len() != sh * sw || b.len() != sh * sw {
        return Err(Error::InvalidArg(format!(
            "source images have {} and {} pixels, expected {sh}x{sw}",
            a.len(),
            b.len()
        )));
    }
    if ch < sh || cw < sw {
        return Err(Error::InvalidArg(format!(
            "canvas {ch}x{cw} is smaller than the {sh}x{sw} sources"
        )));
    }
    let mut out = vec![0.0; ch * cw];
    for y in 0..sh {
        for x in 0..sw {
            out[y * cw + x] = a[y * sw + x];
        }
    }
    let (oy, ox) = (ch - sh, cw - sw);
    for y in 0..sh {
        for x in 0..sw {
            let at = (oy + y) * cw + (ox + x);
            out[at] = out[at].max(b[y * sw + x]);
        }
    }
    for p in &mut out {
        *p = *p as f32 as f64;
    }
    Ok(out)
}

/// One split of composed samples, stored flat. Duplicates may occur within a
/// split (sampling is with replacement) but never across splits.
#[derive(Debug, Clone)]
pub struct OverlaySplit {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    labels: [Vec<usize>; 2],
    digests: Vec<u64>,
}

impl OverlaySplit {
    pub(crate) fn with_capacity(height: usize, width: usize, n: usize) -> Self {
        Self {
            height,
            width,
            pixels: Vec::with_capacity(n * height * width),
            labels: [Vec::with_capacity(n), Vec::with_capacity(n)],
            digests: Vec::with_capacity(n),
        }
    }

    pub(crate) fn push(&mut self, pixels: &[f64], label_a: usize, label_b: usize, digest: u64) {
        self.pixels.extend_from_slice(pixels);
        self.labels[0].push(label_a);
        self.labels[1].push(label_b);
        self.digests.push(digest);
    }

    pub fn len(&self) -> usize {
        self.digests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digests.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn labels(&self, task: usize) -> &[usize] {
        &self.labels[task]
    }

    pub fn sample_digest(&self, i: usize) -> u64 {
        self.digests[i]
    }

    /// Assembles the given samples into a batch shaped [B, 1, H, W].
    pub fn batch(&self, indices: &[usize]) -> Result<MultiTaskBatch> {
        if indices.iter().any(|&i| i >= self.len()) {
            return Err(Error::InvalidArg(format!(
                "batch index out of range for a split of {}",
                self.len()
            )));
        }
        let n = self.height * self.width;
        let mut pixels = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        let x = Tensor::new(vec![indices.len(), 1, self.height, self.width], pixels)?;
        let labels = (0..2)
            .map(|task| indices.iter().map(|&i| self.labels[task][i]).collect())
            .collect();
        MultiTaskBatch::new(x, labels)
    }
}

/// The composed two-task dataset: three disjoint splits plus the provenance
/// needed to rebuild or cache it.
#[derive(Debug, Clone)]
pub struct OverlayDataset {
    pub train: OverlaySplit,
    pub val: OverlaySplit,
    pub test: OverlaySplit,
    pub source_names: (String, String),
    pub seed: u64,
}

impl OverlayDataset {
    pub fn split(&self, name: &str) -> Result<&OverlaySplit> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidArg(format!(
                "unknown split {other:?}; expected train, val, or test"
            ))),
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Builds the dataset by drawing source pairs uniformly with replacement:
/// the first source supplies task 1's image and label, the second task 2's.
/// Splits are filled in order (train, val, test); a draw whose composed
/// digest already belongs to an earlier split is redrawn, which keeps splits
/// disjoint.
pub fn build_overlay_dataset(
    source_a: &LabeledImages,
    source_b: &LabeledImages,
    source_names: (&str, &str),
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<OverlayDataset> {
    if source_a.height() != source_b.height() || source_a.width() != source_b.width() {
        return Err(Error::InvalidArg(format!(
            "sources disagree on image size: {}x{} vs {}x{}",
            source_a.height(),
            source_a.width(),
            source_b.height(),
            source_b.width()
        )));
    }
    let src = (source_a.height(), source_a.width());
    let canvas = (CANVAS_SIDE, CANVAS_SIDE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut claimed = std::collections::HashMap::new();
    let (train_n, val_n, test_n) = sizes;
    let mut splits = Vec::new();
    for (split_idx, n) in [train_n, val_n, test_n].into_iter().enumerate() {
        let mut split = OverlaySplit::with_capacity(CANVAS_SIDE, CANVAS_SIDE, n);
        for _ in 0..n {
            let mut redraws = 0;
            loop {
                let i = rng.random_range(0..source_a.len());
                let j = rng.random_range(0..source_b.len());
                let composed = compose_overlay(source_a.image(i), source_b.image(j), src, canvas)?;
                let (la, lb) = (source_a.label(i), source_b.label(j));
                let digest = sample_digest(&composed, la, lb);
                match claimed.get(&digest) {
                    Some(&owner) if owner != split_idx => {
                        redraws += 1;
                        if redraws > MAX_REDRAWS {
                            return Err(Error::InvalidArg(format!(
                                "cannot fill split {split_idx} with samples distinct from earlier splits; sources offer too few distinct pairs for sizes {sizes:?}"
                            )));
                        }
                    }
                    _ => {
                        claimed.insert(digest, split_idx);
                        split.push(&composed, la, lb, digest);
                        break;
                    }
                }
            }
        }
        splits.push(split);
    }
    let mut it = splits.into_iter();
    Ok(OverlayDataset {
        train: it.next().expect("three splits built"),
        val: it.next().expect("three splits built"),
        test: it.next().expect("three splits built"),
        source_names: (source_names.0.to_string(), source_names.1.to_string()),
        seed,
    })
}

/// Content digest of one composed sample: pixels plus both labels.
pub(crate) fn sample_digest(pixels: &[f64], label_a: usize, label_b: usize) -> u64 {
    let mut h = Fnv1a::new();
    for &p in pixels {
        h.write_f64(p);
    }
    h.write_u64(label_a as u64);
    h.write_u64(label_b as u64);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_source(levels: &[f64]) -> LabeledImages {
        // Image content encodes the label, so composed samples can be
        // checked for label fidelity from pixels alone.
        let images = levels.iter().map(|&v| vec![v; 4]).collect();
        let labels = (0..levels.len()).collect();
        LabeledImages::new(2, 2, images, labels).unwrap()
    }

    #[test]
    fn zero_sources_compose_to_a_zero_canvas() {
        let out = compose_overlay(&[0.0; 4], &[0.0; 4], (2, 2), (3, 3)).unwrap();
        assert_eq!(out, vec![0.0; 9]);
    }

    #[test]
    fn lone_top_left_image_is_padded_bottom_right() {
        let a = [0.1, 0.2, 0.3, 0.4];
        let out = compose_overlay(&a, &[0.0; 4], (2, 2), (3, 3)).unwrap();
        let f = |v: f64| v as f32 as f64;
        assert_eq!(
            out,
            vec![f(0.1), f(0.2), 0.0, f(0.3), f(0.4), 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn full_size_overlap_takes_the_per_pixel_max() {
        let side = 28;
        let a = vec![0.5; side * side];
        let out = compose_overlay(&a, &a, (side, side), (CANVAS_SIDE, CANVAS_SIDE)).unwrap();
        // a covers rows/cols 0..28, b covers 8..36; the overlap stays 0.5.
        assert_eq!(out[0], 0.5);
        assert_eq!(out[14 * CANVAS_SIDE + 14], 0.5);
        assert_eq!(out[35 * CANVAS_SIDE + 35], 0.5);
        // Off-diagonal corners belong to neither source.
        assert_eq!(out[35], 0.0);
        assert_eq!(out[35 * CANVAS_SIDE], 0.0);
    }

    #[test]
    fn composition_matches_a_direct_pixel_index_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
        let out = compose_overlay(&a, &b, (3, 3), (4, 4)).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let from_a = if y < 3 && x < 3 { a[y * 3 + x] } else { 0.0 };
                let from_b = if y >= 1 && x >= 1 {
                    b[(y - 1) * 3 + (x - 1)]
                } else {
                    0.0
                };
                assert_eq!(out[y * 4 + x], from_a.max(from_b) as f32 as f64);
            }
        }
    }

    #[test]
    fn undersized_canvas_is_rejected() {
        assert!(compose_overlay(&[0.0; 4], &[0.0; 4], (2, 2), (1, 3)).is_err());
        assert!(compose_overlay(&[0.0; 4], &[0.0; 4], (2, 2), (3, 1)).is_err());
    }

    #[test]
    fn dataset_is_deterministic_under_its_seed() {
        let src = constant_source(&[0.05, 0.10, 0.15, 0.20]);
        let a = build_overlay_dataset(&src, &src, ("s", "s"), (8, 3, 3), 42).unwrap();
        let b = build_overlay_dataset(&src, &src, ("s", "s"), (8, 3, 3), 42).unwrap();
        assert_eq!(a.train.digests, b.train.digests);
        assert_eq!(a.val.digests, b.val.digests);
        assert_eq!(a.test.digests, b.test.digests);
        let c = build_overlay_dataset(&src, &src, ("s", "s"), (8, 3, 3), 43).unwrap();
        assert_ne!(a.train.digests, c.train.digests);
    }

    #[test]
    fn composed_samples_carry_both_source_labels() {
        // Constant-valued sources make the labels readable off the canvas:
        // the top-left-only corner holds a's level, the bottom-right b's.
        let levels = [0.05, 0.10, 0.15, 0.20, 0.25];
        let src = constant_source(&levels);
        let data = build_overlay_dataset(&src, &src, ("s", "s"), (20, 5, 5), 7).unwrap();
        for split in [&data.train, &data.val, &data.test] {
            for i in 0..split.len() {
                let img = split.image(i);
                let la = split.labels(0)[i];
                let lb = split.labels(1)[i];
                assert_eq!(img[0], levels[la] as f32 as f64);
                assert_eq!(img[img.len() - 1], levels[lb] as f32 as f64);
            }
        }
    }

    #[test]
    fn splits_never_share_a_sample_digest() {
        let src = constant_source(&[0.05, 0.10, 0.15, 0.20, 0.25]);
        let data = build_overlay_dataset(&src, &src, ("s", "s"), (15, 4, 4), 9).unwrap();
        let mut seen = std::collections::HashMap::new();
        for (idx, split) in [&data.train, &data.val, &data.test].into_iter().enumerate() {
            for i in 0..split.len() {
                if let Some(owner) = seen.insert(split.sample_digest(i), idx) {
                    assert_eq!(owner, idx, "digest shared across splits");
                }
            }
        }
    }

    #[test]
    fn infeasible_split_sizes_are_rejected() {
        // Two 1-image sources offer exactly one distinct pair; a second
        // nonempty split can never be disjoint from the first.
        let one = constant_source(&[0.5]);
        let err = build_overlay_dataset(&one, &one, ("s", "s"), (1, 1, 0), 1).unwrap_err();
        assert!(err.to_string().contains("distinct"), "{err}");
    }

    #[test]
    fn batches_pick_the_requested_samples() {
        let src = constant_source(&[0.05, 0.10, 0.15, 0.20]);
        let data = build_overlay_dataset(&src, &src, ("s", "s"), (6, 2, 2), 3).unwrap();
        let batch = data.train.batch(&[4, 0, 2]).unwrap();
        assert_eq!(batch.x().shape(), &[3, 1, CANVAS_SIDE, CANVAS_SIDE]);
        assert_eq!(batch.labels(0).unwrap()[1], data.train.labels(0)[0]);
        assert_eq!(batch.labels(1).unwrap()[2], data.train.labels(1)[2]);
        assert!(data.train.batch(&[99]).is_err());
    }

    #[test]
    fn idx_sources_convert_with_scaled_pixels() {
        let images = IdxFile::new(vec![2, 2, 2], vec![0, 255, 51, 0, 255, 0, 0, 102]).unwrap();
        let labels = IdxFile::new(vec![2], vec![3, 9]).unwrap();
        let src = LabeledImages::from_idx(&images, &labels).unwrap();
        assert_eq!(src.len(), 2);
        assert_eq!(src.image(0)[1], 1.0);
        assert_eq!(src.image(1)[3], 102.0 / 255.0);
        assert_eq!((src.label(0), src.label(1)), (3, 9));

        let bad_labels = IdxFile::new(vec![2], vec![3, 10]).unwrap();
        assert!(LabeledImages::from_idx(&images, &bad_labels).is_err());
        let short_labels = IdxFile::new(vec![1], vec![3]).unwrap();
        assert!(LabeledImages::from_idx(&images, &short_labels).is_err());
    }

    #[test]
    fn mismatched_sources_are_rejected() {
        let a = constant_source(&[0.5]);
        let b = LabeledImages::new(3, 3, vec![vec![0.0; 9]], vec![0]).unwrap();
        assert!(build_overlay_dataset(&a, &b, ("a", "b"), (1, 0, 0), 1).is_err());
        assert!(LabeledImages::new(2, 2, vec![], vec![]).is_err());
        assert!(LabeledImages::new(2, 2, vec![vec![1.5; 4]], vec![0]).is_err());
    }
}
