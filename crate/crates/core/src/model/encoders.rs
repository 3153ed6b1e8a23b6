use magnifier_nn::layers::{Conv2d, DepthwiseConv2d, LayerNorm, Linear};
use magnifier_nn::ops::ConvGeometry;
use magnifier_nn::{Graph, ParamStore, Var};
use rand::RngCore;

use super::{Encoder, EncoderSize, Level};

#[derive(Debug, Clone, Copy)]
pub(crate) struct CnnPlan {
    pub widths: [usize; 3],
    pub blocks: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TransformerPlan {
    pub dims: [usize; 2],
    pub heads: [usize; 2],
    pub sr: [usize; 2],
    pub depths: [usize; 2],
    pub mlp_ratio: usize,
}

pub(crate) fn compact_plan(size: EncoderSize) -> CnnPlan {
    match size {
        EncoderSize::Small => CnnPlan {
            widths: [8, 16, 32],
            blocks: 1,
        },
        EncoderSize::Large => CnnPlan {
            widths: [16, 32, 64],
            blocks: 2,
        },
    }
}

pub(crate) fn residual_plan(size: EncoderSize) -> CnnPlan {
    match size {
        EncoderSize::Small => CnnPlan {
            widths: [8, 16, 32],
            blocks: 1,
        },
        EncoderSize::Large => CnnPlan {
            widths: [12, 24, 48],
            blocks: 2,
        },
    }
}

pub(crate) fn transformer_plan(size: EncoderSize) -> TransformerPlan {
    match size {
        EncoderSize::Small => TransformerPlan {
            dims: [16, 32],
            heads: [1, 2],
            sr: [4, 2],
            depths: [1, 1],
            mlp_ratio: 2,
        },
        EncoderSize::Large => TransformerPlan {
            dims: [32, 64],
            heads: [1, 2],
            sr: [4, 2],
            depths: [2, 2],
            mlp_ratio: 2,
        },
    }
}

fn cnn_levels(widths: [usize; 3]) -> Vec<Level> {
    widths
        .iter()
        .enumerate()
        .map(|(i, &channels)| Level {
            channels,
            reduction: 1 << i,
        })
        .collect()
}

/// Depthwise 3×3 then pointwise 1×1.
struct Separable {
    dw: DepthwiseConv2d,
    pw: Conv2d,
}

impl Separable {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        Self {
            dw: DepthwiseConv2d::new(
                ps,
                &format!("{name}.dw"),
                cin,
                ConvGeometry::new(3, stride, 1),
                true,
                rng,
            ),
            pw: Conv2d::new(
                ps,
                &format!("{name}.pw"),
                cin,
                cout,
                ConvGeometry::new(1, 1, 0),
                true,
                rng,
            ),
        }
    }

    fn forward<'g>(&self, g: &'g Graph, ps: &ParamStore, x: Var<'g>) -> Var<'g> {
        self.pw.forward(g, ps, self.dw.forward(g, ps, x).relu())
    }
}

pub struct CompactCnnEncoder {
    stem: Conv2d,
    stages: Vec<(Separable, Vec<Separable>)>,
    levels: Vec<Level>,
}

impl CompactCnnEncoder {
    pub(crate) fn new(
        ps: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        plan: CnnPlan,
        rng: &mut dyn RngCore,
    ) -> Self {
        let [w0, w1, w2] = plan.widths;
        let stem = Conv2d::new(
            ps,
            &format!("{prefix}.stem"),
            in_channels,
            w0,
            ConvGeometry::same(3),
            true,
            rng,
        );
        let stages = [(w0, w1), (w1, w2)]
            .iter()
            .enumerate()
            .map(|(s, &(cin, cout))| {
                let name = format!("{prefix}.stage{}", s + 1);
                let down = Separable::new(ps, &format!("{name}.down"), cin, cout, 2, rng);
                let blocks = (1..plan.blocks)
                    .map(|b| Separable::new(ps, &format!("{name}.block{b}"), cout, cout, 1, rng))
                    .collect();
                (down, blocks)
            })
            .collect();
        Self {
            stem,
            stages,
            levels: cnn_levels(plan.widths),
        }
    }
}

impl Encoder for CompactCnnEncoder {
    fn levels(&self) -> &[Level] {
        &self.levels
    }

    fn input_multiple(&self) -> usize {
        4
    }

    fn forward<'g>(&self, g: &'g Graph, ps: &ParamStore, x: Var<'g>) -> Vec<Var<'g>> {
        let mut x = self.stem.forward(g, ps, x).relu();
        let mut out = vec![x];
        for (down, blocks) in &self.stages {
            x = down.forward(g, ps, x).relu();
            for block in blocks {
                x = x.add(block.forward(g, ps, x)).relu();
            }
            out.push(x);
        }
        out
    }
}

struct BasicBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl BasicBlock {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let shortcut = (stride != 1 || cin != cout).then(|| {
            Conv2d::new(
                ps,
                &format!("{name}.shortcut"),
                cin,
                cout,
                ConvGeometry::new(1, stride, 0),
                true,
                rng,
            )
        });
        Self {
            conv1: Conv2d::new(
                ps,
                &format!("{name}.conv1"),
                cin,
                cout,
                ConvGeometry::new(3, stride, 1),
                true,
                rng,
            ),
            conv2: Conv2d::new(
                ps,
                &format!("{name}.conv2"),
                cout,
                cout,
                ConvGeometry::same(3),
                true,
                rng,
            ),
            shortcut,
        }
    }

    fn forward<'g>(&self, g: &'g Graph, ps: &ParamStore, x: Var<'g>) -> Var<'g> {
        let y = self
            .conv2
            .forward(g, ps, self.conv1.forward(g, ps, x).relu());
        let skip = match &self.shortcut {
            Some(s) => s.forward(g, ps, x),
            None => x,
        };
        y.add(skip).relu()
    }
}

pub struct ResidualCnnEncoder {
    stem: Conv2d,
    stages: Vec<Vec<BasicBlock>>,
    levels: Vec<Level>,
}

impl ResidualCnnEncoder {
    pub(crate) fn new(
        ps: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        plan: CnnPlan,
        rng: &mut dyn RngCore,
    ) -> Self {
        let [w0, w1, w2] = plan.widths;
        let stem = Conv2d::new(
            ps,
            &format!("{prefix}.stem"),
            in_channels,
            w0,
            ConvGeometry::same(3),
            true,
            rng,
        );
        let stages = [(w0, w1), (w1, w2)]
            .iter()
            .enumerate()
            .map(|(s, &(cin, cout))| {
                (0..plan.blocks)
                    .map(|b| {
                        let name = format!("{prefix}.stage{}.block{b}", s + 1);
                        if b == 0 {
                            BasicBlock::new(ps, &name, cin, cout, 2, rng)
                        } else {
                            BasicBlock::new(ps, &name, cout, cout, 1, rng)
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            stem,
            stages,
            levels: cnn_levels(plan.widths),
        }
    }
}

impl Encoder for ResidualCnnEncoder {
    fn levels(&self) -> &[Level] {
        &self.levels
    }

    fn input_multiple(&self) -> usize {
        4
    }

    fn forward<'g>(&self, g: &'g Graph, ps: &ParamStore, x: Var<'g>) -> Vec<Var<'g>> {
        let mut x = self.stem.forward(g, ps, x).relu();
        let mut out = vec![x];
        for stage in &self.stages {
            for block in stage {
                x = block.forward(g, ps, x);
            }
            out.push(x);
        }
        out
    }
}

/// Attention with keys and values computed on a spatially reduced map.
struct EfficientAttention {
    heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    reduce: Option<(Conv2d, LayerNorm)>,
    dim: usize,
}

impl EfficientAttention {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        sr: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let reduce = (sr > 1).then(|| {
            (
                Conv2d::new(
                    ps,
                    &format!("{name}.sr"),
                    dim,
                    dim,
                    ConvGeometry::new(sr, sr, 0),
                    true,
                    rng,
                ),
                LayerNorm::new(ps, &format!("{name}.sr_norm"), dim, rng),
            )
        });
        Self {
            heads,
            q: Linear::new(ps, &format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(ps, &format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(ps, &format!("{name}.v"), dim, dim, true, rng),
            proj: Linear::new(ps, &format!("{name}.proj"), dim, dim, true, rng),
            reduce,
            dim,
        }
    }

    fn forward<'g>(
        &self,
        g: &'g Graph,
        ps: &ParamStore,
        x: Var<'g>,
        h: usize,
        w: usize,
    ) -> Var<'g> {
        let q = self.q.forward(g, ps, x).split_heads(self.heads);
        let ctx = match &self.reduce {
            Some((conv, norm)) => {
                let reduced = conv.forward(g, ps, x.from_tokens(h, w)).to_tokens();
                norm.forward(g, ps, reduced)
            }
            None => x,
        };
        let k = self.k.forward(g, ps, ctx).split_heads(self.heads);
        let v = self.v.forward(g, ps, ctx).split_heads(self.heads);
        let head_dim = (self.dim / self.heads) as f32;
        let attn = q.bmm(k, true).scale(head_dim.powf(-0.5)).softmax_last();
        self.proj
            .forward(g, ps, attn.bmm(v, false).merge_heads(self.heads))
    }
}

struct MixFfn {
    fc1: Linear,
    dw: DepthwiseConv2d,
    fc2: Linear,
}

impl MixFfn {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        Self {
            fc1: Linear::new(ps, &format!("{name}.fc1"), dim, hidden, true, rng),
            dw: DepthwiseConv2d::new(
                ps,
                &format!("{name}.dw"),
                hidden,
                ConvGeometry::same(3),
                true,
                rng,
            ),
            fc2: Linear::new(ps, &format!("{name}.fc2"), hidden, dim, true, rng),
        }
    }

    fn forward<'g>(
        &self,
        g: &'g Graph,
        ps: &ParamStore,
        x: Var<'g>,
        h: usize,
        w: usize,
    ) -> Var<'g> {
        let y = self.fc1.forward(g, ps, x).from_tokens(h, w);
        let y = self.dw.forward(g, ps, y).to_tokens().gelu();
        self.fc2.forward(g, ps, y)
    }
}

struct TransformerBlock {
    norm1: LayerNorm,
    attn: EfficientAttention,
    norm2: LayerNorm,
    ffn: MixFfn,
}

struct TransformerStage {
    embed: Conv2d,
    embed_norm: LayerNorm,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
}

pub struct TransformerEncoder {
    stages: Vec<TransformerStage>,
    levels: Vec<Level>,
    multiple: usize,
}

impl TransformerEncoder {
    pub(crate) fn new(
        ps: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        plan: TransformerPlan,
        rng: &mut dyn RngCore,
    ) -> Self {
        let mut stages = Vec::new();
        let mut levels = Vec::new();
        let mut cin = in_channels;
        let mut multiple = 1;
        for s in 0..2 {
            let name = format!("{prefix}.stage{}", s + 1);
            let dim = plan.dims[s];
            let embed = Conv2d::new(
                ps,
                &format!("{name}.embed"),
                cin,
                dim,
                ConvGeometry::new(3, 2, 1),
                true,
                rng,
            );
            let embed_norm = LayerNorm::new(ps, &format!("{name}.embed_norm"), dim, rng);
            let blocks = (0..plan.depths[s])
                .map(|b| {
                    let bn = format!("{name}.block{b}");
                    TransformerBlock {
                        norm1: LayerNorm::new(ps, &format!("{bn}.norm1"), dim, rng),
                        attn: EfficientAttention::new(
                            ps,
                            &format!("{bn}.attn"),
                            dim,
                            plan.heads[s],
                            plan.sr[s],
                            rng,
                        ),
                        norm2: LayerNorm::new(ps, &format!("{bn}.norm2"), dim, rng),
                        ffn: MixFfn::new(ps, &format!("{bn}.ffn"), dim, dim * plan.mlp_ratio, rng),
                    }
                })
                .collect();
            let norm = LayerNorm::new(ps, &format!("{name}.norm"), dim, rng);
            stages.push(TransformerStage {
                embed,
                embed_norm,
                blocks,
                norm,
            });
            let reduction = 2 << s;
            levels.push(Level {
                channels: dim,
                reduction,
            });
            multiple = multiple.max(reduction * plan.sr[s]);
            cin = dim;
        }
        Self {
            stages,
            levels,
            multiple,
        }
    }
}

impl Encoder for TransformerEncoder {
    fn levels(&self) -> &[Level] {
        &self.levels
    }

    fn input_multiple(&self) -> usize {
        self.multiple
    }

    fn forward<'g>(&self, g: &'g Graph, ps: &ParamStore, x: Var<'g>) -> Vec<Var<'g>> {
        let mut x = x;
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let map = stage.embed.forward(g, ps, x);
            let shape = map.shape();
            let (h, w) = (shape[2], shape[3]);
            let mut t = stage.embed_norm.forward(g, ps, map.to_tokens());
            for block in &stage.blocks {
                let a = block
                    .attn
                    .forward(g, ps, block.norm1.forward(g, ps, t), h, w);
                t = t.add(a);
                let f = block
                    .ffn
                    .forward(g, ps, block.norm2.forward(g, ps, t), h, w);
                t = t.add(f);
            }
            x = stage.norm.forward(g, ps, t).from_tokens(h, w);
            out.push(x);
        }
        out
    }
}
