//! Pedestrian detection pipeline primitives.
//!
//! Everything in this crate is pure computation over in-memory data and only
//! needs `alloc`: box geometry and patch resampling, the dataset sampling
//! protocol, region proposals, training-data mining (padding estimation,
//! random crops, color-histogram negative decorrelation), a small
//! convolutional network with backpropagation, a linear SVM with
//! proposal-score fusion, Caltech-style miss-rate/FPPI evaluation and the
//! per-frame detection pipeline. File formats, timing and the command-line
//! tool live in the `pedestrian` crate.
#![no_std]

extern crate alloc;

pub mod classify;
pub mod dataset;
mod error;
pub mod evaluate;
pub mod features;
pub mod geometry;
pub mod image;
pub mod mining;
pub mod pipeline;
pub mod proposals;

pub use crate::error::{Error, Result};
pub use crate::geometry::{iou, BoundingBox, FrameSize};
pub use crate::image::FrameImage;
pub use crate::proposals::ScoredRegion;

/// Seeded generator used wherever a component owns its own randomness.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's standard seeded generator.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
