//! Differentiable operations, implemented as methods on [`Var`](crate::Var).

mod conv;
mod elementwise;
mod spatial;
mod tokens;

pub use conv::ConvGeometry;
pub use spatial::{crop_tensor, recompose_tensor};
