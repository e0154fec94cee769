//! Tile-level soft labels for orthophotos from georeferenced underwater
//! imagery: footprint projection, tiling, image-to-tile association, label
//! aggregation, dataset splitting and evaluation.

pub mod association;
pub mod eval;
pub mod geometry;
pub mod labeling;
pub mod pipeline;
pub mod split;
pub mod sync;
pub mod synth;
pub mod tiling;
