//! Dual-granularity burned-area segmentation.

pub mod cli;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod indices;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod patch_grid;

pub use error::{Error, Result};

/// Per-pixel labels, 1 = burned, 0 = unburned.
pub type BinaryMask = ndarray::Array2<u8>;
