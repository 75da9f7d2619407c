//! File formats, synthetic data, benchmarking and the command-line
//! workflows around `pedestrian-core`.

pub mod bundle;
pub mod error;
pub mod imageio;
pub mod manifest;
pub mod regions;
pub mod synth;
pub mod timing;
pub mod workflow;

pub use crate::error::{Error, Result};
pub use pedestrian_core as core;
