//! Ops over token sequences `(B, N, C)`, used by the attention encoders.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis, IxDyn};

use crate::flops::LayerOp;
use crate::graph::Var;
use crate::Tensor;

fn reshape_permute(t: &Tensor, split: &[usize], axes: &[usize], merged: &[usize]) -> Tensor {
    t.view()
        .into_shape_with_order(IxDyn(split))
        .expect("split shape")
        .permuted_axes(IxDyn(axes))
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(merged))
        .expect("merged shape")
}

fn as_matrix(t: &Tensor, cols: usize) -> ArrayView2<'_, f32> {
    ArrayView2::from_shape(
        (t.len() / cols, cols),
        t.as_slice().expect("standard layout"),
    )
    .expect("matrix view")
}

impl<'g> Var<'g> {
    /// `(B, C, H, W)` → `(B, H·W, C)`.
    pub fn to_tokens(self) -> Var<'g> {
        let x = self.value();
        let &[b, c, h, w] = x.shape() else {
            panic!("to_tokens: expected NCHW, got {:?}", x.shape())
        };
        let out = reshape_permute(&x, &[b, c, h * w], &[0, 2, 1], &[b, h * w, c]);
        self.graph.custom(out, &[self], move |g| {
            vec![Some(reshape_permute(
                g,
                &[b, h * w, c],
                &[0, 2, 1],
                &[b, c, h, w],
            ))]
        })
    }

    /// `(B, H·W, C)` → `(B, C, H, W)`.
    pub fn from_tokens(self, h: usize, w: usize) -> Var<'g> {
        let x = self.value();
        let &[b, n, c] = x.shape() else {
            panic!("from_tokens: expected (B, N, C), got {:?}", x.shape())
        };
        assert_eq!(n, h * w, "from_tokens: {n} tokens do not tile {h}x{w}");
        let out = reshape_permute(&x, &[b, n, c], &[0, 2, 1], &[b, c, h, w]);
        self.graph.custom(out, &[self], move |g| {
            vec![Some(reshape_permute(g, &[b, c, n], &[0, 2, 1], &[b, n, c]))]
        })
    }

    /// Affine map over the last axis: `x · Wᵀ + b`, `weight` is `(out, in)`.
    pub fn linear(self, weight: Var<'g>, bias: Option<Var<'g>>) -> Var<'g> {
        let x = self.value();
        let w = weight.value();
        let &[fout, fin] = w.shape() else {
            panic!("linear: weight must be 2-D, got {:?}", w.shape())
        };
        let shape = x.shape().to_vec();
        assert_eq!(shape.last(), Some(&fin), "linear: input features");
        let rows = x.len() / fin;
        self.graph.record(LayerOp::Linear {
            rows,
            in_features: fin,
            out_features: fout,
        });
        let xm = as_matrix(&x, fin);
        let wm = as_matrix(&w, fin);
        let mut out = Array2::<f32>::zeros((rows, fout));
        general_mat_mul(1.0, &xm, &wm.t(), 0.0, &mut out);
        if let Some(bias) = bias {
            let bv = bias.value();
            assert_eq!(bv.shape(), [fout], "linear: bias shape");
            out += &bv
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("1-D bias");
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().expect("non-empty shape") = fout;
        let out = out
            .into_shape_with_order(IxDyn(&out_shape))
            .expect("linear output");

        let need_dx = self.requires_grad();
        let has_bias = bias.is_some();
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.graph.custom(out, &parents, move |g| {
            let g = g.as_standard_layout();
            let gm = ArrayView2::from_shape((rows, fout), g.as_slice().expect("standard"))
                .expect("grad matrix");
            let xm = as_matrix(&x, fin);
            let wm = as_matrix(&w, fin);
            let dx = need_dx.then(|| {
                let mut dx = Array2::<f32>::zeros((rows, fin));
                general_mat_mul(1.0, &gm, &wm, 0.0, &mut dx);
                dx.into_shape_with_order(IxDyn(&shape)).expect("dx shape")
            });
            let mut dw = Array2::<f32>::zeros((fout, fin));
            general_mat_mul(1.0, &gm.t(), &xm, 0.0, &mut dw);
            let mut grads = vec![dx, Some(dw.into_dyn())];
            if has_bias {
                grads.push(Some(gm.sum_axis(Axis(0)).into_dyn()));
            }
            grads
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(self, gamma: Var<'g>, beta: Var<'g>, eps: f32) -> Var<'g> {
        let x = self.value();
        let gv = gamma.value();
        let bv = beta.value();
        let c = *x.shape().last().expect("non-empty shape");
        assert_eq!(gv.shape(), [c], "layer_norm: gamma shape");
        assert_eq!(bv.shape(), [c], "layer_norm: beta shape");
        let gs = gv.as_slice().expect("standard").to_vec();
        let bs = bv.as_slice().expect("standard");
        let xs = x.as_slice().expect("standard");
        let rows = x.len() / c;
        let mut xhat = vec![0.0f32; x.len()];
        let mut inv_std = vec![0.0f32; rows];
        let mut out = vec![0.0f32; x.len()];
        for r in 0..rows {
            let row = &xs[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f32>() / c as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let xh = (row[j] - mean) * is;
                xhat[r * c + j] = xh;
                out[r * c + j] = xh * gs[j] + bs[j];
            }
        }
        let out = Tensor::from_shape_vec(x.raw_dim(), out).expect("layer_norm output");
        let dim = x.raw_dim();
        self.graph.custom(out, &[self, gamma, beta], move |g| {
            let g = g.as_standard_layout();
            let gsl = g.as_slice().expect("standard");
            let mut dx = vec![0.0f32; gsl.len()];
            let mut dgamma = vec![0.0f32; c];
            let mut dbeta = vec![0.0f32; c];
            for r in 0..rows {
                let grow = &gsl[r * c..(r + 1) * c];
                let xh = &xhat[r * c..(r + 1) * c];
                let mut mean_d = 0.0f32;
                let mut mean_dx = 0.0f32;
                for j in 0..c {
                    let d = grow[j] * gs[j];
                    mean_d += d;
                    mean_dx += d * xh[j];
                    dgamma[j] += grow[j] * xh[j];
                    dbeta[j] += grow[j];
                }
                mean_d /= c as f32;
                mean_dx /= c as f32;
                for j in 0..c {
                    let d = grow[j] * gs[j];
                    dx[r * c + j] = inv_std[r] * (d - mean_d - xh[j] * mean_dx);
                }
            }
            vec![
                Some(Tensor::from_shape_vec(dim.clone(), dx).expect("dx")),
                Some(Tensor::from_shape_vec(IxDyn(&[c]), dgamma).expect("dgamma")),
                Some(Tensor::from_shape_vec(IxDyn(&[c]), dbeta).expect("dbeta")),
            ]
        })
    }

    /// `(B, N, heads·D)` → `(B·heads, N, D)`.
    pub fn split_heads(self, heads: usize) -> Var<'g> {
        let x = self.value();
        let &[b, n, c] = x.shape() else {
            panic!("split_heads: expected (B, N, C), got {:?}", x.shape())
        };
        assert_eq!(c % heads, 0, "split_heads: {c} channels over {heads} heads");
        let d = c / heads;
        let out = reshape_permute(&x, &[b, n, heads, d], &[0, 2, 1, 3], &[b * heads, n, d]);
        self.graph.custom(out, &[self], move |g| {
            vec![Some(reshape_permute(
                g,
                &[b, heads, n, d],
                &[0, 2, 1, 3],
                &[b, n, c],
            ))]
        })
    }

    /// Inverse of [`Var::split_heads`].
    pub fn merge_heads(self, heads: usize) -> Var<'g> {
        let x = self.value();
        let &[bh, n, d] = x.shape() else {
            panic!("merge_heads: expected (B·H, N, D), got {:?}", x.shape())
        };
        let b = bh / heads;
        let out = reshape_permute(&x, &[b, heads, n, d], &[0, 2, 1, 3], &[b, n, heads * d]);
        self.graph.custom(out, &[self], move |g| {
            vec![Some(reshape_permute(
                g,
                &[b, n, heads, d],
                &[0, 2, 1, 3],
                &[bh, n, d],
            ))]
        })
    }

    /// Batched matrix product `(G, M, K) · (G, K, N)`, or `· (G, N, K)ᵀ` when
    /// `transpose_rhs` is set.
    pub fn bmm(self, rhs: Var<'g>, transpose_rhs: bool) -> Var<'g> {
        let a = self.value();
        let bt = rhs.value();
        let &[g0, m, k] = a.shape() else {
            panic!("bmm: lhs must be 3-D, got {:?}", a.shape())
        };
        let &[g1, r0, r1] = bt.shape() else {
            panic!("bmm: rhs must be 3-D, got {:?}", bt.shape())
        };
        assert_eq!(g0, g1, "bmm: batch mismatch");
        let (rk, n) = if transpose_rhs { (r1, r0) } else { (r0, r1) };
        assert_eq!(k, rk, "bmm: inner dimension mismatch");
        self.graph.record(LayerOp::MatMul { batch: g0, m, k, n });

        let asl = a.as_slice().expect("standard");
        let bsl = bt.as_slice().expect("standard");
        let mut out = vec![0.0f32; g0 * m * n];
        for gi in 0..g0 {
            let am = ArrayView2::from_shape((m, k), &asl[gi * m * k..(gi + 1) * m * k]).expect("a");
            let bm = ArrayView2::from_shape((r0, r1), &bsl[gi * r0 * r1..(gi + 1) * r0 * r1])
                .expect("b");
            let mut om = ArrayViewMut2::from_shape((m, n), &mut out[gi * m * n..(gi + 1) * m * n])
                .expect("out");
            if transpose_rhs {
                general_mat_mul(1.0, &am, &bm.t(), 0.0, &mut om);
            } else {
                general_mat_mul(1.0, &am, &bm, 0.0, &mut om);
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[g0, m, n]), out).expect("bmm output");
        let (need_a, need_b) = (self.requires_grad(), rhs.requires_grad());
        self.graph.custom(out, &[self, rhs], move |g| {
            let g = g.as_standard_layout();
            let gsl = g.as_slice().expect("standard");
            let asl = a.as_slice().expect("standard");
            let bsl = bt.as_slice().expect("standard");
            let mut da = vec![0.0f32; if need_a { a.len() } else { 0 }];
            let mut db = vec![0.0f32; if need_b { bt.len() } else { 0 }];
            for gi in 0..g0 {
                let gm =
                    ArrayView2::from_shape((m, n), &gsl[gi * m * n..(gi + 1) * m * n]).expect("g");
                let am =
                    ArrayView2::from_shape((m, k), &asl[gi * m * k..(gi + 1) * m * k]).expect("a");
                let bm = ArrayView2::from_shape((r0, r1), &bsl[gi * r0 * r1..(gi + 1) * r0 * r1])
                    .expect("b");
                if need_a {
                    let mut dam =
                        ArrayViewMut2::from_shape((m, k), &mut da[gi * m * k..(gi + 1) * m * k])
                            .expect("da");
                    if transpose_rhs {
                        general_mat_mul(1.0, &gm, &bm, 0.0, &mut dam);
                    } else {
                        general_mat_mul(1.0, &gm, &bm.t(), 0.0, &mut dam);
                    }
                }
                if need_b {
                    let mut dbm = ArrayViewMut2::from_shape(
                        (r0, r1),
                        &mut db[gi * r0 * r1..(gi + 1) * r0 * r1],
                    )
                    .expect("db");
                    if transpose_rhs {
                        general_mat_mul(1.0, &gm.t(), &am, 0.0, &mut dbm);
                    } else {
                        general_mat_mul(1.0, &am.t(), &gm, 0.0, &mut dbm);
                    }
                }
            }
            vec![
                need_a.then(|| Tensor::from_shape_vec(a.raw_dim(), da).expect("da")),
                need_b.then(|| Tensor::from_shape_vec(bt.raw_dim(), db).expect("db")),
            ]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax_last(self) -> Var<'g> {
        let x = self.value();
        let c = *x.shape().last().expect("non-empty shape");
        let mut out = x.as_ref().clone();
        for row in out.as_slice_mut().expect("standard").chunks_mut(c) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let y = out.clone();
        self.graph.custom(out, &[self], move |g| {
            let g = g.as_standard_layout();
            let gsl = g.as_slice().expect("standard");
            let ysl = y.as_slice().expect("standard");
            let mut dx = vec![0.0f32; ysl.len()];
            for ((d, gr), yr) in dx.chunks_mut(c).zip(gsl.chunks(c)).zip(ysl.chunks(c)) {
                let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    d[j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(
                Tensor::from_shape_vec(y.raw_dim(), dx).expect("softmax grad"),
            )]
        })
    }
}
