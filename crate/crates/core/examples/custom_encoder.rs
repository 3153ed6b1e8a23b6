//! Plugs a user-defined backbone into the dual-branch model.

use magnifier::model::{
    build_magnifier, Architecture, Encoder, EncoderFactory, EncoderFamily, EncoderSize,
    EncoderSpec, Level, ModelConfig, StockFactory,
};
use magnifier_nn::layers::Conv2d;
use magnifier_nn::ops::ConvGeometry;
use magnifier_nn::{Graph, ParamStore, Var};
use ndarray::Array4;
use rand::RngCore;

/// Two strided 3x3 convolutions.
struct TinyEncoder {
    convs: Vec<Conv2d>,
    levels: Vec<Level>,
}

impl Encoder for TinyEncoder {
    fn levels(&self) -> &[Level] {
        &self.levels
    }

    fn input_multiple(&self) -> usize {
        4
    }

    fn forward<'g>(&self, g: &'g Graph, ps: &ParamStore, x: Var<'g>) -> Vec<Var<'g>> {
        let mut out = Vec::new();
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, ps, h).relu();
            out.push(h);
        }
        out
    }
}

struct TinyFactory {
    width: usize,
}

impl EncoderFactory for TinyFactory {
    fn build(
        &self,
        spec: &EncoderSpec,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut dyn RngCore,
    ) -> magnifier::Result<Box<dyn Encoder>> {
        let geo = ConvGeometry::new(3, 2, 1);
        let a = Conv2d::new(
            store,
            &format!("{prefix}.c1"),
            spec.in_channels,
            self.width,
            geo,
            true,
            rng,
        );
        let b = Conv2d::new(
            store,
            &format!("{prefix}.c2"),
            self.width,
            2 * self.width,
            geo,
            true,
            rng,
        );
        Ok(Box::new(TinyEncoder {
            convs: vec![a, b],
            levels: vec![
                Level {
                    channels: self.width,
                    reduction: 2,
                },
                Level {
                    channels: 2 * self.width,
                    reduction: 4,
                },
            ],
        }))
    }
}

fn main() -> magnifier::Result<()> {
    // family and size only pick the decoder here; the factory decides the backbone
    let cfg = ModelConfig::new(
        EncoderFamily::CompactCnn,
        EncoderSize::Small,
        Architecture::Magnifier,
        12,
        64,
    )
    .with_patch(16, 16);
    let model = build_magnifier(&cfg, &TinyFactory { width: 8 }, &StockFactory, 0)?;
    let p = model.parameter_count();
    println!(
        "global {} + patch {} encoder params, decoder {} ({} patches per tile)",
        p.global_encoder,
        p.patch_encoder,
        p.decoder,
        model.grid().num_patches()
    );
    let logits = model.forward(Array4::<f32>::zeros((2, 64, 64, 12)).view())?;
    println!("logits {:?}", logits.dim());
    Ok(())
}
