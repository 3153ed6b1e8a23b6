use magnifier_nn::{Graph, ParamStore, Var};
use rand::RngCore;

use super::{Decoder, DecoderFactory, DecoderFamily, Encoder, EncoderFactory, EncoderSpec, Level};
use crate::error::Result;

/// Passes its input through as a single full-resolution level.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEncoderFactory;

/// Returns the finest fused level unchanged, so model output carries the
/// fused channels rather than class logits.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDecoderFactory;

struct IdentityEncoder {
    levels: [Level; 1],
}

impl Encoder for IdentityEncoder {
    fn levels(&self) -> &[Level] {
        &self.levels
    }

    fn input_multiple(&self) -> usize {
        1
    }

    fn forward<'g>(&self, _g: &'g Graph, _ps: &ParamStore, x: Var<'g>) -> Vec<Var<'g>> {
        vec![x]
    }
}

impl EncoderFactory for IdentityEncoderFactory {
    fn build(
        &self,
        spec: &EncoderSpec,
        _store: &mut ParamStore,
        _prefix: &str,
        _rng: &mut dyn RngCore,
    ) -> Result<Box<dyn Encoder>> {
        Ok(Box::new(IdentityEncoder {
            levels: [Level {
                channels: spec.in_channels,
                reduction: 1,
            }],
        }))
    }
}

struct IdentityDecoder;

impl Decoder for IdentityDecoder {
    fn forward<'g>(
        &self,
        _g: &'g Graph,
        _ps: &ParamStore,
        features: &[Var<'g>],
        _out_hw: (usize, usize),
    ) -> Var<'g> {
        features[0]
    }
}

impl DecoderFactory for IdentityDecoderFactory {
    fn build(
        &self,
        _family: DecoderFamily,
        _levels: &[Level],
        _num_classes: usize,
        _store: &mut ParamStore,
        _prefix: &str,
        _rng: &mut dyn RngCore,
    ) -> Result<Box<dyn Decoder>> {
        Ok(Box::new(IdentityDecoder))
    }
}
