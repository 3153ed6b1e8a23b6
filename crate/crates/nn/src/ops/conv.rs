use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis, IxDyn};

use crate::flops::LayerOp;
use crate::graph::Var;
use crate::Tensor;

/// Spatial geometry shared by the convolution ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        assert!(
            kernel > 0 && stride > 0,
            "kernel and stride must be positive"
        );
        Self {
            kernel,
            stride,
            padding,
            dilation: 1,
        }
    }

    /// Atrous stride-1 convolution that preserves spatial size.
    pub fn dilated(kernel: usize, dilation: usize) -> Self {
        assert!(dilation > 0, "dilation must be positive");
        Self {
            kernel,
            stride: 1,
            padding: dilation * (kernel / 2),
            dilation,
        }
    }

    fn span(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    /// Stride-1 convolution that preserves spatial size (odd kernels).
    pub fn same(kernel: usize) -> Self {
        Self::new(kernel, 1, kernel / 2)
    }

    pub fn output_len(&self, input: usize) -> usize {
        let padded = input + 2 * self.padding;
        assert!(
            padded >= self.span(),
            "kernel span {} larger than padded input {}",
            self.span(),
            padded
        );
        (padded - self.span()) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

#[derive(Clone, Copy)]
struct Dims {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

fn dims4(shape: &[usize], op: &str) -> [usize; 4] {
    assert_eq!(shape.len(), 4, "{op}: expected NCHW input, got {shape:?}");
    [shape[0], shape[1], shape[2], shape[3]]
}

fn im2col(x: &[f32], d: Dims, geo: ConvGeometry, cols: &mut [f32]) {
    let k = geo.kernel;
    let hw = d.ho * d.wo;
    for ci in 0..d.c {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..d.ho {
                    let drow = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    let iy = (oy * geo.stride + ky * geo.dilation) as isize - geo.padding as isize;
                    if iy < 0 || iy >= d.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, out) in drow.iter_mut().enumerate() {
                        let ix =
                            (ox * geo.stride + kx * geo.dilation) as isize - geo.padding as isize;
                        *out = if ix >= 0 && ix < d.w as isize {
                            src[ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], d: Dims, geo: ConvGeometry, dx: &mut [f32]) {
    let k = geo.kernel;
    let hw = d.ho * d.wo;
    for ci in 0..d.c {
        let plane = &mut dx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..d.ho {
                    let iy = (oy * geo.stride + ky * geo.dilation) as isize - geo.padding as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.wo {
                        let ix =
                            (ox * geo.stride + kx * geo.dilation) as isize - geo.padding as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<'g> Var<'g> {
    /// Dense 2-D convolution. `self` is `(B, Cin, H, W)`, `weight` is
    /// `(Cout, Cin, k, k)` and `bias` is `(Cout)`.
    pub fn conv2d(self, weight: Var<'g>, bias: Option<Var<'g>>, geo: ConvGeometry) -> Var<'g> {
        let x = self.value();
        let w = weight.value();
        let [b, ci, h, wd] = dims4(x.shape(), "conv2d");
        let [co, wci, kh, kw] = dims4(w.shape(), "conv2d weight");
        assert_eq!(
            wci, ci,
            "conv2d: weight expects {wci} input channels, got {ci}"
        );
        assert!(
            kh == geo.kernel && kw == geo.kernel,
            "conv2d: kernel size mismatch"
        );
        let d = Dims {
            c: ci,
            h,
            w: wd,
            ho: geo.output_len(h),
            wo: geo.output_len(wd),
        };
        let kk = ci * geo.kernel * geo.kernel;
        let hw = d.ho * d.wo;
        self.graph.record(LayerOp::Conv2d {
            batch: b,
            in_channels: ci,
            out_channels: co,
            kernel: geo.kernel,
            groups: 1,
            out_h: d.ho,
            out_w: d.wo,
        });

        let xs = x.as_slice().expect("standard layout");
        let wmat = ArrayView2::from_shape((co, kk), w.as_slice().expect("standard layout"))
            .expect("weight shape");
        let mut out = vec![0.0f32; b * co * hw];
        let mut cols = if geo.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0f32; kk * hw]
        };
        for bi in 0..b {
            let xb = &xs[bi * ci * h * wd..(bi + 1) * ci * h * wd];
            let colview = if geo.is_pointwise() {
                ArrayView2::from_shape((kk, hw), xb).expect("pointwise view")
            } else {
                im2col(xb, d, geo, &mut cols);
                ArrayView2::from_shape((kk, hw), &cols[..]).expect("cols view")
            };
            let mut ob =
                ArrayViewMut2::from_shape((co, hw), &mut out[bi * co * hw..(bi + 1) * co * hw])
                    .expect("output view");
            general_mat_mul(1.0, &wmat, &colview, 0.0, &mut ob);
        }
        if let Some(bias) = bias {
            let bv = bias.value();
            assert_eq!(bv.shape(), [co], "conv2d: bias shape");
            for (i, chunk) in out.chunks_mut(hw).enumerate() {
                let bval = bv[i % co];
                chunk.iter_mut().for_each(|v| *v += bval);
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[b, co, d.ho, d.wo]), out).expect("conv output");

        let need_dx = self.requires_grad();
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.graph.custom(out, &parents, move |g| {
            let gs = g.as_standard_layout();
            let gs = gs.as_slice().expect("standard layout");
            let xs = x.as_slice().expect("standard layout");
            let wmat = ArrayView2::from_shape((co, kk), w.as_slice().expect("standard layout"))
                .expect("weight shape");
            let mut dw = Array2::<f32>::zeros((co, kk));
            let mut dx = if need_dx {
                vec![0.0f32; x.len()]
            } else {
                Vec::new()
            };
            let mut cols = vec![0.0f32; if geo.is_pointwise() { 0 } else { kk * hw }];
            let mut dcols = Array2::<f32>::zeros((kk, hw));
            for bi in 0..b {
                let gb = ArrayView2::from_shape((co, hw), &gs[bi * co * hw..(bi + 1) * co * hw])
                    .expect("grad view");
                let xb = &xs[bi * ci * h * wd..(bi + 1) * ci * h * wd];
                let colview = if geo.is_pointwise() {
                    ArrayView2::from_shape((kk, hw), xb).expect("pointwise view")
                } else {
                    im2col(xb, d, geo, &mut cols);
                    ArrayView2::from_shape((kk, hw), &cols[..]).expect("cols view")
                };
                general_mat_mul(1.0, &gb, &colview.t(), 1.0, &mut dw);
                if need_dx {
                    let dxb = &mut dx[bi * ci * h * wd..(bi + 1) * ci * h * wd];
                    if geo.is_pointwise() {
                        let mut dxv = ArrayViewMut2::from_shape((kk, hw), dxb).expect("dx view");
                        general_mat_mul(1.0, &wmat.t(), &gb, 0.0, &mut dxv);
                    } else {
                        general_mat_mul(1.0, &wmat.t(), &gb, 0.0, &mut dcols);
                        col2im(dcols.as_slice().expect("standard layout"), d, geo, dxb);
                    }
                }
            }
            let dx = need_dx.then(|| Tensor::from_shape_vec(x.raw_dim(), dx).expect("dx shape"));
            let dw = dw.into_shape_with_order(w.raw_dim()).expect("dw shape");
            let mut grads = vec![dx, Some(dw)];
            if has_bias {
                let db = g
                    .sum_axis(Axis(3))
                    .sum_axis(Axis(2))
                    .sum_axis(Axis(0))
                    .into_dyn();
                grads.push(Some(db));
            }
            grads
        })
    }

    /// Depthwise 2-D convolution (one filter per channel). `weight` is
    /// `(C, 1, k, k)`.
    pub fn depthwise_conv2d(
        self,
        weight: Var<'g>,
        bias: Option<Var<'g>>,
        geo: ConvGeometry,
    ) -> Var<'g> {
        let x = self.value();
        let w = weight.value();
        let [b, c, h, wd] = dims4(x.shape(), "depthwise_conv2d");
        assert_eq!(
            w.shape(),
            [c, 1, geo.kernel, geo.kernel],
            "depthwise_conv2d: weight shape"
        );
        assert_eq!(geo.dilation, 1, "depthwise_conv2d: dilation unsupported");
        let k = geo.kernel;
        let (ho, wo) = (geo.output_len(h), geo.output_len(wd));
        self.graph.record(LayerOp::Conv2d {
            batch: b,
            in_channels: c,
            out_channels: c,
            kernel: k,
            groups: c,
            out_h: ho,
            out_w: wo,
        });

        // Valid output range along one axis for a kernel tap at offset `t`.
        let span = move |t: usize, input: usize, outlen: usize| -> (usize, usize) {
            let lo_num = geo.padding as isize - t as isize;
            let lo = if lo_num <= 0 {
                0
            } else {
                (lo_num as usize).div_ceil(geo.stride)
            };
            let hi_num = input as isize - 1 + geo.padding as isize - t as isize;
            let hi = if hi_num < 0 {
                0
            } else {
                (hi_num as usize / geo.stride + 1).min(outlen)
            };
            (lo, hi.max(lo))
        };

        let xs = x.as_slice().expect("standard layout");
        let ws = w.as_slice().expect("standard layout");
        let mut out = vec![0.0f32; b * c * ho * wo];
        for bc in 0..b * c {
            let ch = bc % c;
            let plane = &xs[bc * h * wd..(bc + 1) * h * wd];
            let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
            for ky in 0..k {
                let (y0, y1) = span(ky, h, ho);
                for kx in 0..k {
                    let (x0, x1) = span(kx, wd, wo);
                    let wv = ws[(ch * k + ky) * k + kx];
                    for oy in y0..y1 {
                        let iy = oy * geo.stride + ky - geo.padding;
                        let srow = &plane[iy * wd..(iy + 1) * wd];
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        for ox in x0..x1 {
                            drow[ox] += wv * srow[ox * geo.stride + kx - geo.padding];
                        }
                    }
                }
            }
        }
        if let Some(bias) = bias {
            let bv = bias.value();
            assert_eq!(bv.shape(), [c], "depthwise_conv2d: bias shape");
            for (i, chunk) in out.chunks_mut(ho * wo).enumerate() {
                let bval = bv[i % c];
                chunk.iter_mut().for_each(|v| *v += bval);
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[b, c, ho, wo]), out).expect("dw output");

        let need_dx = self.requires_grad();
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.graph.custom(out, &parents, move |g| {
            let gs = g.as_standard_layout();
            let gs = gs.as_slice().expect("standard layout");
            let xs = x.as_slice().expect("standard layout");
            let ws = w.as_slice().expect("standard layout");
            let mut dw = vec![0.0f32; w.len()];
            let mut dx = if need_dx {
                vec![0.0f32; x.len()]
            } else {
                Vec::new()
            };
            for bc in 0..b * c {
                let ch = bc % c;
                let plane = &xs[bc * h * wd..(bc + 1) * h * wd];
                let gplane = &gs[bc * ho * wo..(bc + 1) * ho * wo];
                for ky in 0..k {
                    let (y0, y1) = span(ky, h, ho);
                    for kx in 0..k {
                        let (x0, x1) = span(kx, wd, wo);
                        let widx = (ch * k + ky) * k + kx;
                        let wv = ws[widx];
                        let mut acc = 0.0f32;
                        for oy in y0..y1 {
                            let iy = oy * geo.stride + ky - geo.padding;
                            let grow = &gplane[oy * wo..(oy + 1) * wo];
                            let srow = &plane[iy * wd..(iy + 1) * wd];
                            for ox in x0..x1 {
                                acc += grow[ox] * srow[ox * geo.stride + kx - geo.padding];
                            }
                            if need_dx {
                                let drow =
                                    &mut dx[bc * h * wd + iy * wd..bc * h * wd + (iy + 1) * wd];
                                for ox in x0..x1 {
                                    drow[ox * geo.stride + kx - geo.padding] += wv * grow[ox];
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
            let dx = need_dx.then(|| Tensor::from_shape_vec(x.raw_dim(), dx).expect("dx shape"));
            let dw = Tensor::from_shape_vec(w.raw_dim(), dw).expect("dw shape");
            let mut grads = vec![dx, Some(dw)];
            if has_bias {
                let db = g
                    .sum_axis(Axis(3))
                    .sum_axis(Axis(2))
                    .sum_axis(Axis(0))
                    .into_dyn();
                grads.push(Some(db));
            }
            grads
        })
    }
}
