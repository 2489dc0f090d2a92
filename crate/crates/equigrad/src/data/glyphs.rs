//! A bundled procedural glyph source: ten geometric classes rendered onto
//! 28x28 images with seeded position, scale, stroke, and noise jitter. It
//! stands in for file-based sources so every run and test works offline.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::overlay::LabeledImages;
use crate::error::Result;

/// Side length of a glyph image, matching common image-dataset sources.
pub const GLYPH_SIDE: usize = 28;

/// Renders `per_class` images for each of the ten classes, interleaved so
/// every prefix of the set is class-balanced. Deterministic under the seed.
pub fn glyph_set(per_class: usize, seed: u64) -> Result<LabeledImages> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = per_class * 10;
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for idx in 0..total {
        let class = idx % 10;
        images.push(glyph_image(class, &mut rng));
        labels.push(class);
    }
    LabeledImages::new(GLYPH_SIDE, GLYPH_SIDE, images, labels)
}

/// Draws one jittered glyph. Shapes are built from distance functions: a
/// pixel's intensity falls off linearly past the stroke thickness.
fn glyph_image(class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cx = 13.5 + rng.random_range(-1.5..1.5);
    let cy = 13.5 + rng.random_range(-1.5..1.5);
    let scale = rng.random_range(0.85..1.15);
    let thick = rng.random_range(1.2..2.0);
    let level = rng.random_range(0.75..1.0);
    let mut out = Vec::with_capacity(GLYPH_SIDE * GLYPH_SIDE);
    for py in 0..GLYPH_SIDE {
        for px in 0..GLYPH_SIDE {
            let x = px as f64 - cx;
            let y = py as f64 - cy;
            let d = shape_distance(class, x / scale, y / scale);
            let ink = (thick - d).clamp(0.0, 1.0);
            let noise = rng.random_range(0.0..0.06);
            out.push((level * ink + noise).clamp(0.0, 1.0));
        }
    }
    out
}

/// Distance from a centered point to the class's stroke set.
fn shape_distance(class: usize, x: f64, y: f64) -> f64 {
    let r = x.hypot(y);
    match class {
        // Ring.
        0 => (r - 8.0).abs(),
        // Vertical bar.
        1 => segment(x, y, 0.0, -9.0, 0.0, 9.0),
        // Horizontal bar.
        2 => segment(x, y, -9.0, 0.0, 9.0, 0.0),
        // Main diagonal.
        3 => segment(x, y, -7.0, -7.0, 7.0, 7.0),
        // Anti-diagonal.
        4 => segment(x, y, -7.0, 7.0, 7.0, -7.0),
        // Plus sign.
        5 => segment(x, y, 0.0, -8.0, 0.0, 8.0).min(segment(x, y, -8.0, 0.0, 8.0, 0.0)),
        // Filled disc.
        6 => (r - 6.0).max(0.0),
        // Cross (both diagonals).
        7 => segment(x, y, -7.0, -7.0, 7.0, 7.0).min(segment(x, y, -7.0, 7.0, 7.0, -7.0)),
        // Two horizontal bars.
        8 => segment(x, y, -8.0, -5.0, 8.0, -5.0).min(segment(x, y, -8.0, 5.0, 8.0, 5.0)),
        // Square outline.
        9 => (x.abs().max(y.abs()) - 7.0).abs(),
        other => unreachable!("glyph class {other} out of range"),
    }
}

/// Distance from (px, py) to the segment (ax, ay)-(bx, by).
fn segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let t = (((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (px - (ax + t * dx)).hypot(py - (ay + t * dy))
}
