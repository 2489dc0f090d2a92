//! Task data: batches, raw-file ingestion, the bundled glyph source, the
//! overlay image suite, and its on-disk cache.

pub mod batch;
pub mod cache;
pub mod glyphs;
pub mod idx;
pub mod overlay;

pub use batch::MultiTaskBatch;
pub use cache::overlay_cache;
pub use glyphs::{glyph_set, GLYPH_SIDE};
pub use idx::{load_idx, parse_idx, serialize_idx, IdxFile};
pub use overlay::{
    build_overlay_dataset, compose_overlay, LabeledImages, OverlayDataset, OverlaySplit,
    CANVAS_SIDE,
};
