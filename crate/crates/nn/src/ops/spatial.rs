use ndarray::{concatenate, s, Axis, IxDyn};

use crate::graph::Var;
use crate::Tensor;

fn permute(t: &Tensor, split: &[usize], axes: &[usize], merged: &[usize]) -> Tensor {
    let view = t
        .view()
        .into_shape_with_order(IxDyn(split))
        .expect("split shape");
    view.permuted_axes(IxDyn(axes))
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(merged))
        .expect("merged shape")
}

/// Crop `(B, C, H, W)` into `rows × cols` tiles folded into the batch axis:
/// output index `(b * rows + r) * cols + c`.
pub fn crop_tensor(x: &Tensor, rows: usize, cols: usize) -> Tensor {
    let &[b, c, h, w] = x.shape() else {
        panic!("crop: expected NCHW, got {:?}", x.shape())
    };
    assert!(
        h % rows == 0 && w % cols == 0,
        "crop: {h}x{w} not divisible into {rows}x{cols} tiles"
    );
    let (ph, pw) = (h / rows, w / cols);
    permute(
        x,
        &[b, c, rows, ph, cols, pw],
        &[0, 2, 4, 1, 3, 5],
        &[b * rows * cols, c, ph, pw],
    )
}

/// Inverse of [`crop_tensor`].
pub fn recompose_tensor(x: &Tensor, rows: usize, cols: usize) -> Tensor {
    let &[n, c, ph, pw] = x.shape() else {
        panic!("recompose: expected NCHW, got {:?}", x.shape())
    };
    assert!(
        n % (rows * cols) == 0,
        "recompose: {n} tiles do not form {rows}x{cols} grids"
    );
    let b = n / (rows * cols);
    permute(
        x,
        &[b, rows, cols, c, ph, pw],
        &[0, 3, 1, 4, 2, 5],
        &[b, c, rows * ph, cols * pw],
    )
}

/// Source taps for bilinear upsampling by an integer factor, half-pixel
/// centres, edge-clamped.
fn bilinear_taps(input: usize, factor: usize) -> Vec<(usize, usize, f32, f32)> {
    (0..input * factor)
        .map(|o| {
            let src = ((o as f32 + 0.5) / factor as f32 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = if i0 + 1 < input { i0 + 1 } else { i0 };
            let l1 = src - i0 as f32;
            (i0, i1, 1.0 - l1, l1)
        })
        .collect()
}

impl<'g> Var<'g> {
    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(parts: &[Var<'g>]) -> Var<'g> {
        assert!(!parts.is_empty(), "concat of nothing");
        let graph = parts[0].graph;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat: shapes must agree off-channel");
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
        graph.custom(out, parts, move |g| {
            let mut start = 0;
            widths
                .iter()
                .map(|&wd| {
                    let piece = g.slice_axis(Axis(1), (start..start + wd).into()).to_owned();
                    start += wd;
                    Some(piece)
                })
                .collect()
        })
    }

    /// Differentiable [`crop_tensor`].
    pub fn crop_patches(self, rows: usize, cols: usize) -> Var<'g> {
        let out = crop_tensor(&self.value(), rows, cols);
        self.graph.custom(out, &[self], move |g| {
            vec![Some(recompose_tensor(g, rows, cols))]
        })
    }

    /// Differentiable [`recompose_tensor`].
    pub fn recompose_patches(self, rows: usize, cols: usize) -> Var<'g> {
        let out = recompose_tensor(&self.value(), rows, cols);
        self.graph.custom(out, &[self], move |g| {
            vec![Some(crop_tensor(g, rows, cols))]
        })
    }

    /// Bilinear upsampling of an NCHW tensor by an integer factor.
    pub fn upsample_bilinear(self, factor: usize) -> Var<'g> {
        assert!(factor >= 1, "upsample factor must be positive");
        if factor == 1 {
            return self;
        }
        let x = self.value();
        let &[b, c, h, w] = x.shape() else {
            panic!("upsample: expected NCHW, got {:?}", x.shape())
        };
        let (ho, wo) = (h * factor, w * factor);
        let ty = bilinear_taps(h, factor);
        let tx = bilinear_taps(w, factor);
        let xs = x.as_slice().expect("standard layout");
        let mut out = vec![0.0f32; b * c * ho * wo];
        let mut rowbuf = vec![0.0f32; h * wo];
        for p in 0..b * c {
            let src = &xs[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                for (ox, &(i0, i1, l0, l1)) in tx.iter().enumerate() {
                    rowbuf[y * wo + ox] = l0 * src[y * w + i0] + l1 * src[y * w + i1];
                }
            }
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for (oy, &(i0, i1, l0, l1)) in ty.iter().enumerate() {
                for ox in 0..wo {
                    dst[oy * wo + ox] = l0 * rowbuf[i0 * wo + ox] + l1 * rowbuf[i1 * wo + ox];
                }
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[b, c, ho, wo]), out).expect("upsample output");
        self.graph.custom(out, &[self], move |g| {
            let gs = g.as_standard_layout();
            let gs = gs.as_slice().expect("standard layout");
            let mut dx = vec![0.0f32; b * c * h * w];
            let mut rowbuf = vec![0.0f32; h * wo];
            for p in 0..b * c {
                let gp = &gs[p * ho * wo..(p + 1) * ho * wo];
                rowbuf.fill(0.0);
                for (oy, &(i0, i1, l0, l1)) in ty.iter().enumerate() {
                    for ox in 0..wo {
                        let v = gp[oy * wo + ox];
                        rowbuf[i0 * wo + ox] += l0 * v;
                        rowbuf[i1 * wo + ox] += l1 * v;
                    }
                }
                let dp = &mut dx[p * h * w..(p + 1) * h * w];
                for y in 0..h {
                    for (ox, &(i0, i1, l0, l1)) in tx.iter().enumerate() {
                        let v = rowbuf[y * wo + ox];
                        dp[y * w + i0] += l0 * v;
                        dp[y * w + i1] += l1 * v;
                    }
                }
            }
            vec![Some(
                Tensor::from_shape_vec(IxDyn(&[b, c, h, w]), dx).expect("upsample grad"),
            )]
        })
    }

    /// Channel slice `[start, end)` of an NCHW tensor.
    pub fn narrow_channels(self, start: usize, end: usize) -> Var<'g> {
        let x = self.value();
        let full = x.raw_dim();
        let out = x.slice_axis(Axis(1), (start..end).into()).to_owned();
        self.graph.custom(out, &[self], move |g| {
            let mut dx = Tensor::zeros(full.clone());
            dx.slice_mut(s![.., start..end, .., ..]).assign(g);
            vec![Some(dx)]
        })
    }
}
