//! Small reverse-mode autodiff engine for NCHW feature maps and token
//! sequences, with the layers and optimizer needed to train compact
//! segmentation networks on CPU.

pub mod flops;
pub mod graph;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;

pub use flops::{total_flops, LayerOp};
pub use graph::{Gradients, Graph, Var};
pub use params::{Init, ParamId, ParamStore};

/// Dense `f32` tensor, always kept in standard (row-major) layout by the ops.
pub type Tensor = ndarray::ArrayD<f32>;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{context}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter `{0}` missing")]
    MissingParam(String),
    #[error("expected {expected} parameters, found {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("no cost model for layer `{0}`")]
    UnsupportedLayer(String),
}
