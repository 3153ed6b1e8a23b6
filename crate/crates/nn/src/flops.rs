//! Analytic operation counting.
//!
//! Ops that do multiply-accumulate work push a [`LayerOp`] onto their graph's
//! trace. FLOPs are `2 × MACs`; element-wise ops, normalization and resampling
//! are treated as free.

use crate::NnError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerOp {
    Conv2d {
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        groups: usize,
        out_h: usize,
        out_w: usize,
    },
    Linear {
        rows: usize,
        in_features: usize,
        out_features: usize,
    },
    MatMul {
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    /// A user-defined op with no known cost model.
    Opaque(String),
}

impl LayerOp {
    pub fn macs(&self) -> Result<u64, NnError> {
        let macs = match *self {
            LayerOp::Conv2d {
                batch,
                in_channels,
                out_channels,
                kernel,
                groups,
                out_h,
                out_w,
            } => {
                (batch * out_channels * out_h * out_w) as u64
                    * (kernel * kernel * (in_channels / groups.max(1))) as u64
            }
            LayerOp::Linear {
                rows,
                in_features,
                out_features,
            } => (rows * in_features * out_features) as u64,
            LayerOp::MatMul { batch, m, k, n } => (batch * m * k * n) as u64,
            LayerOp::Opaque(ref name) => return Err(NnError::UnsupportedLayer(name.clone())),
        };
        Ok(macs)
    }

    pub fn flops(&self) -> Result<u64, NnError> {
        self.macs().map(|m| 2 * m)
    }
}

/// Sum of FLOPs over a trace.
pub fn total_flops(ops: &[LayerOp]) -> Result<u64, NnError> {
    ops.iter().map(LayerOp::flops).sum()
}
