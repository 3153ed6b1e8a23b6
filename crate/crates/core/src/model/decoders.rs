use magnifier_nn::layers::Conv2d;
use magnifier_nn::ops::ConvGeometry;
use magnifier_nn::{Graph, ParamStore, Var};
use rand::RngCore;

use super::{Decoder, Level};
use crate::error::{Error, Result};

const ASPP_WIDTH: usize = 24;
const LOW_WIDTH: usize = 8;
const MLP_WIDTH: usize = 32;

fn pointwise(
    ps: &mut ParamStore,
    name: &str,
    cin: usize,
    cout: usize,
    rng: &mut dyn RngCore,
) -> Conv2d {
    Conv2d::new(ps, name, cin, cout, ConvGeometry::new(1, 1, 0), true, rng)
}

/// Upsamples `x` so its spatial size matches `hw`.
fn upsample_to<'g>(x: Var<'g>, hw: (usize, usize)) -> Var<'g> {
    let h = x.shape()[2];
    debug_assert!(
        hw.0.is_multiple_of(h),
        "output height {} not a multiple of {h}",
        hw.0
    );
    x.upsample_bilinear(hw.0 / h)
}

/// Atrous spatial pyramid on the deepest level, refined with one shallower
/// level, predicted at that level's resolution and upsampled.
pub struct DeepLabDecoder {
    aspp: Vec<Conv2d>,
    aspp_proj: Conv2d,
    low: Option<(usize, Conv2d)>,
    fuse: Conv2d,
    classifier: Conv2d,
}

impl DeepLabDecoder {
    pub(crate) fn new(
        ps: &mut ParamStore,
        prefix: &str,
        levels: &[Level],
        num_classes: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let deep = levels[levels.len() - 1];
        let aspp = [1, 2, 3]
            .iter()
            .enumerate()
            .map(|(i, &rate)| {
                let name = format!("{prefix}.aspp{i}");
                if rate == 1 {
                    pointwise(ps, &name, deep.channels, ASPP_WIDTH, rng)
                } else {
                    Conv2d::new(
                        ps,
                        &name,
                        deep.channels,
                        ASPP_WIDTH,
                        ConvGeometry::dilated(3, rate),
                        true,
                        rng,
                    )
                }
            })
            .collect();
        let aspp_proj = pointwise(
            ps,
            &format!("{prefix}.aspp_proj"),
            3 * ASPP_WIDTH,
            ASPP_WIDTH,
            rng,
        );
        let low = (levels.len() > 1).then(|| {
            let idx = levels.len() - 2;
            (
                idx,
                pointwise(
                    ps,
                    &format!("{prefix}.low"),
                    levels[idx].channels,
                    LOW_WIDTH,
                    rng,
                ),
            )
        });
        let fuse_in = ASPP_WIDTH + if low.is_some() { LOW_WIDTH } else { 0 };
        Self {
            aspp,
            aspp_proj,
            low,
            fuse: Conv2d::new(
                ps,
                &format!("{prefix}.fuse"),
                fuse_in,
                ASPP_WIDTH,
                ConvGeometry::same(3),
                true,
                rng,
            ),
            classifier: pointwise(
                ps,
                &format!("{prefix}.classifier"),
                ASPP_WIDTH,
                num_classes,
                rng,
            ),
        }
    }
}

impl Decoder for DeepLabDecoder {
    fn forward<'g>(
        &self,
        g: &'g Graph,
        ps: &ParamStore,
        features: &[Var<'g>],
        out_hw: (usize, usize),
    ) -> Var<'g> {
        let deep = features[features.len() - 1];
        let branches: Vec<_> = self
            .aspp
            .iter()
            .map(|c| c.forward(g, ps, deep).relu())
            .collect();
        let mut x = self
            .aspp_proj
            .forward(g, ps, Var::concat_channels(&branches))
            .relu();
        if let Some((idx, proj)) = &self.low {
            let low = features[*idx];
            let size = (low.shape()[2], low.shape()[3]);
            x = Var::concat_channels(&[upsample_to(x, size), proj.forward(g, ps, low).relu()]);
        }
        let x = self.fuse.forward(g, ps, x).relu();
        upsample_to(self.classifier.forward(g, ps, x), out_hw)
    }
}

/// Top-down path with a 3×3 conv after each skip concatenation.
pub struct UNetDecoder {
    stages: Vec<Conv2d>,
    ratios: Vec<usize>,
    classifier: Conv2d,
}

impl UNetDecoder {
    pub(crate) fn new(
        ps: &mut ParamStore,
        prefix: &str,
        levels: &[Level],
        num_classes: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let mut stages = Vec::new();
        let mut ratios = Vec::new();
        let mut width = levels[levels.len() - 1].channels;
        for i in (0..levels.len() - 1).rev() {
            let (fine, coarse) = (levels[i], levels[i + 1]);
            if coarse.reduction % fine.reduction != 0 || coarse.reduction <= fine.reduction {
                return Err(Error::InvalidConfig(format!(
                    "level reductions must grow by integer factors, got {} then {}",
                    fine.reduction, coarse.reduction
                )));
            }
            ratios.push(coarse.reduction / fine.reduction);
            let out = fine.channels;
            stages.push(Conv2d::new(
                ps,
                &format!("{prefix}.up{i}"),
                width + fine.channels,
                out,
                ConvGeometry::same(3),
                true,
                rng,
            ));
            width = out;
        }
        Ok(Self {
            stages,
            ratios,
            classifier: pointwise(ps, &format!("{prefix}.classifier"), width, num_classes, rng),
        })
    }
}

impl Decoder for UNetDecoder {
    fn forward<'g>(
        &self,
        g: &'g Graph,
        ps: &ParamStore,
        features: &[Var<'g>],
        out_hw: (usize, usize),
    ) -> Var<'g> {
        let mut x = features[features.len() - 1];
        for (k, (conv, &ratio)) in self.stages.iter().zip(&self.ratios).enumerate() {
            let skip = features[features.len() - 2 - k];
            x = Var::concat_channels(&[x.upsample_bilinear(ratio), skip]);
            x = conv.forward(g, ps, x).relu();
        }
        upsample_to(self.classifier.forward(g, ps, x), out_hw)
    }
}

/// Projects every level to a common width, upsamples to the finest level,
/// concatenates and fuses.
pub struct AllMlpDecoder {
    proj: Vec<Conv2d>,
    fuse: Conv2d,
    classifier: Conv2d,
}

impl AllMlpDecoder {
    pub(crate) fn new(
        ps: &mut ParamStore,
        prefix: &str,
        levels: &[Level],
        num_classes: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let proj = levels
            .iter()
            .enumerate()
            .map(|(i, l)| pointwise(ps, &format!("{prefix}.proj{i}"), l.channels, MLP_WIDTH, rng))
            .collect();
        Self {
            proj,
            fuse: pointwise(
                ps,
                &format!("{prefix}.fuse"),
                levels.len() * MLP_WIDTH,
                MLP_WIDTH,
                rng,
            ),
            classifier: pointwise(
                ps,
                &format!("{prefix}.classifier"),
                MLP_WIDTH,
                num_classes,
                rng,
            ),
        }
    }
}

impl Decoder for AllMlpDecoder {
    fn forward<'g>(
        &self,
        g: &'g Graph,
        ps: &ParamStore,
        features: &[Var<'g>],
        out_hw: (usize, usize),
    ) -> Var<'g> {
        let finest = (features[0].shape()[2], features[0].shape()[3]);
        let parts: Vec<_> = self
            .proj
            .iter()
            .zip(features)
            .map(|(p, &f)| upsample_to(p.forward(g, ps, f), finest))
            .collect();
        let x = self
            .fuse
            .forward(g, ps, Var::concat_channels(&parts))
            .relu();
        upsample_to(self.classifier.forward(g, ps, x), out_hw)
    }
}
