//! Dual-granularity segmentation network.
//!
//! A [`MagnifierModel`] runs two encoders of the same family and size with
//! independent weights. The global encoder sees the whole tile. The patch
//! encoder sees the tile's non-overlapping `patch_h × patch_w` crops, folded
//! into the batch axis, and its per-patch outputs are put back in grid order.
//! At every pyramid level the two feature maps are concatenated along the
//! channel axis, so the shared decoder receives `2·C` channels where a
//! single-encoder model would receive `C`.
//!
//! Encoders and decoders are pluggable through [`EncoderFactory`] and
//! [`DecoderFactory`]; [`StockFactory`] provides the three built-in families.

mod decoders;
mod encoders;
mod identity;

use magnifier_nn::{Graph, ParamStore, Tensor, Var};
use ndarray::{Array2, Array4, ArrayView3, ArrayView4, Axis, IxDyn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use decoders::{AllMlpDecoder, DeepLabDecoder, UNetDecoder};
pub use encoders::{CompactCnnEncoder, ResidualCnnEncoder, TransformerEncoder};
pub use identity::{IdentityDecoderFactory, IdentityEncoderFactory};

use crate::error::{Error, Result};
use crate::patch_grid::{validate_grid, GridSpec};
use crate::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderFamily {
    /// Depthwise-separable CNN (MobileNet-like).
    CompactCnn,
    /// Residual CNN with basic blocks (ResNet-like).
    ResidualCnn,
    /// Hierarchical transformer with spatial-reduction attention (MiT-like).
    HierarchicalTransformer,
}

impl EncoderFamily {
    pub const ALL: [EncoderFamily; 3] = [
        EncoderFamily::CompactCnn,
        EncoderFamily::ResidualCnn,
        EncoderFamily::HierarchicalTransformer,
    ];

    pub fn default_decoder(self) -> DecoderFamily {
        match self {
            EncoderFamily::CompactCnn | EncoderFamily::ResidualCnn => DecoderFamily::DeepLab,
            EncoderFamily::HierarchicalTransformer => DecoderFamily::AllMlp,
        }
    }

    pub fn supports(self, decoder: DecoderFamily) -> bool {
        match self {
            EncoderFamily::CompactCnn | EncoderFamily::ResidualCnn => {
                matches!(decoder, DecoderFamily::DeepLab | DecoderFamily::UNet)
            }
            EncoderFamily::HierarchicalTransformer => decoder == DecoderFamily::AllMlp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderSize {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderFamily {
    /// Atrous pyramid on the deepest level fused with one shallower level.
    DeepLab,
    /// Top-down upsampling with a skip at every level.
    UNet,
    /// Per-level linear projection, upsample, concatenate, fuse.
    AllMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// One encoder over the whole tile.
    Single,
    /// Global encoder plus patch encoder, fused per level.
    Magnifier,
}

/// One pyramid level produced by an encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level {
    pub channels: usize,
    /// Downsampling factor relative to the encoder input.
    pub reduction: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub family: EncoderFamily,
    pub size: EncoderSize,
    pub in_channels: usize,
}

impl EncoderSpec {
    pub fn new(family: EncoderFamily, size: EncoderSize, in_channels: usize) -> Self {
        Self {
            family,
            size,
            in_channels,
        }
    }

    /// Output channels per pyramid level for the stock encoders.
    pub fn out_channels(&self) -> Vec<usize> {
        match self.family {
            EncoderFamily::CompactCnn => encoders::compact_plan(self.size).widths.to_vec(),
            EncoderFamily::ResidualCnn => encoders::residual_plan(self.size).widths.to_vec(),
            EncoderFamily::HierarchicalTransformer => {
                encoders::transformer_plan(self.size).dims.to_vec()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderSpec,
    pub decoder: DecoderFamily,
    pub architecture: Architecture,
    pub image_w: usize,
    pub image_h: usize,
    pub patch_w: usize,
    pub patch_h: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Stock encoder/decoder pairing for `family`, 64×64 patches.
    pub fn new(
        family: EncoderFamily,
        size: EncoderSize,
        architecture: Architecture,
        in_channels: usize,
        tile: usize,
    ) -> Self {
        Self {
            encoder: EncoderSpec::new(family, size, in_channels),
            decoder: family.default_decoder(),
            architecture,
            image_w: tile,
            image_h: tile,
            patch_w: 64.min(tile),
            patch_h: 64.min(tile),
            num_classes: 2,
        }
    }

    pub fn with_patch(mut self, patch_w: usize, patch_h: usize) -> Self {
        self.patch_w = patch_w;
        self.patch_h = patch_h;
        self
    }

    pub fn validate(&self) -> Result<GridSpec> {
        if self.num_classes != 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be 2, got {}",
                self.num_classes
            )));
        }
        if self.encoder.in_channels == 0 {
            return Err(Error::InvalidConfig("in_channels must be positive".into()));
        }
        validate_grid(self.image_w, self.image_h, self.patch_w, self.patch_h)
    }
}

/// Feature extractor producing a pyramid of NCHW maps, shallow to deep.
pub trait Encoder: Send + Sync {
    fn levels(&self) -> &[Level];
    /// Input height and width must be multiples of this.
    fn input_multiple(&self) -> usize;
    fn forward<'g>(&self, g: &'g Graph, ps: &ParamStore, x: Var<'g>) -> Vec<Var<'g>>;
}

/// Maps a feature pyramid to `(B, num_classes, H, W)` logits.
pub trait Decoder: Send + Sync {
    fn forward<'g>(
        &self,
        g: &'g Graph,
        ps: &ParamStore,
        features: &[Var<'g>],
        out_hw: (usize, usize),
    ) -> Var<'g>;
}

pub trait EncoderFactory {
    /// Registers parameters under `prefix.` and returns the encoder.
    fn build(
        &self,
        spec: &EncoderSpec,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut dyn RngCore,
    ) -> Result<Box<dyn Encoder>>;
}

pub trait DecoderFactory {
    /// `levels` carries the channel widths the decoder will actually receive.
    fn build(
        &self,
        family: DecoderFamily,
        levels: &[Level],
        num_classes: usize,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut dyn RngCore,
    ) -> Result<Box<dyn Decoder>>;
}

/// Built-in encoder and decoder families.
#[derive(Debug, Clone, Copy, Default)]
pub struct StockFactory;

impl EncoderFactory for StockFactory {
    fn build(
        &self,
        spec: &EncoderSpec,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut dyn RngCore,
    ) -> Result<Box<dyn Encoder>> {
        Ok(match spec.family {
            EncoderFamily::CompactCnn => Box::new(CompactCnnEncoder::new(
                store,
                prefix,
                spec.in_channels,
                encoders::compact_plan(spec.size),
                rng,
            )),
            EncoderFamily::ResidualCnn => Box::new(ResidualCnnEncoder::new(
                store,
                prefix,
                spec.in_channels,
                encoders::residual_plan(spec.size),
                rng,
            )),
            EncoderFamily::HierarchicalTransformer => Box::new(TransformerEncoder::new(
                store,
                prefix,
                spec.in_channels,
                encoders::transformer_plan(spec.size),
                rng,
            )),
        })
    }
}

impl DecoderFactory for StockFactory {
    fn build(
        &self,
        family: DecoderFamily,
        levels: &[Level],
        num_classes: usize,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut dyn RngCore,
    ) -> Result<Box<dyn Decoder>> {
        if levels.is_empty() {
            return Err(Error::InvalidConfig(
                "decoder needs at least one level".into(),
            ));
        }
        Ok(match family {
            DecoderFamily::DeepLab => {
                Box::new(DeepLabDecoder::new(store, prefix, levels, num_classes, rng))
            }
            DecoderFamily::UNet => {
                Box::new(UNetDecoder::new(store, prefix, levels, num_classes, rng)?)
            }
            DecoderFamily::AllMlp => {
                Box::new(AllMlpDecoder::new(store, prefix, levels, num_classes, rng))
            }
        })
    }
}

/// Exact trainable-parameter counts per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub global_encoder: usize,
    pub patch_encoder: usize,
    pub decoder: usize,
    pub total: usize,
}

impl ParamCount {
    pub fn encoders(&self) -> usize {
        self.global_encoder + self.patch_encoder
    }
}

pub(crate) const GLOBAL_PREFIX: &str = "global";
pub(crate) const PATCH_PREFIX: &str = "patch";
pub(crate) const DECODER_PREFIX: &str = "decoder";

pub struct MagnifierModel {
    config: ModelConfig,
    grid: GridSpec,
    params: ParamStore,
    global_encoder: Box<dyn Encoder>,
    patch_encoder: Option<Box<dyn Encoder>>,
    decoder: Box<dyn Decoder>,
    levels: Vec<Level>,
}

impl std::fmt::Debug for MagnifierModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MagnifierModel")
            .field("config", &self.config)
            .field("levels", &self.levels)
            .field("params", &self.params.numel())
            .finish()
    }
}

/// Builds a model over the given factories with weights drawn from `seed`.
///
/// For [`Architecture::Magnifier`] the factory is called twice with the same
/// spec; both encoders must report identical pyramids.
pub fn build_magnifier(
    config: &ModelConfig,
    encoder_factory: &dyn EncoderFactory,
    decoder_factory: &dyn DecoderFactory,
    seed: u64,
) -> Result<MagnifierModel> {
    let grid = config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();

    let global_encoder =
        encoder_factory.build(&config.encoder, &mut params, GLOBAL_PREFIX, &mut rng)?;
    let levels = global_encoder.levels().to_vec();
    check_input(&*global_encoder, config.image_h, config.image_w, "image")?;

    let patch_encoder = match config.architecture {
        Architecture::Single => None,
        Architecture::Magnifier => {
            let enc =
                encoder_factory.build(&config.encoder, &mut params, PATCH_PREFIX, &mut rng)?;
            if enc.levels() != levels.as_slice() {
                return Err(Error::IncompatibleShapes(format!(
                    "global encoder levels {:?} vs patch encoder levels {:?}",
                    levels,
                    enc.levels()
                )));
            }
            check_input(&*enc, config.patch_h, config.patch_w, "patch")?;
            Some(enc)
        }
    };

    let width = if patch_encoder.is_some() { 2 } else { 1 };
    let fused: Vec<Level> = levels
        .iter()
        .map(|l| Level {
            channels: l.channels * width,
            reduction: l.reduction,
        })
        .collect();
    let decoder = decoder_factory.build(
        config.decoder,
        &fused,
        config.num_classes,
        &mut params,
        DECODER_PREFIX,
        &mut rng,
    )?;

    Ok(MagnifierModel {
        config: config.clone(),
        grid,
        params,
        global_encoder,
        patch_encoder,
        decoder,
        levels,
    })
}

fn check_input(enc: &dyn Encoder, h: usize, w: usize, what: &str) -> Result<()> {
    let m = enc.input_multiple().max(1);
    if !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(Error::IncompatibleShapes(format!(
            "{what} size {h}x{w} is not a multiple of the encoder stride {m}"
        )));
    }
    Ok(())
}

/// `(B, H, W, C)` → `(B, C, H, W)`.
pub fn nhwc_to_nchw(batch: ArrayView4<'_, f32>) -> Tensor {
    batch
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .into_owned()
        .into_dyn()
}

/// `(B, C, H, W)` → `(B, H, W, C)`.
pub fn nchw_to_nhwc(t: &Tensor) -> Result<Array4<f32>> {
    let v = t
        .view()
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|_| Error::shape("nchw_to_nhwc", &[0, 0, 0, 0], t.shape()))?;
    Ok(v.permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .into_owned())
}

impl MagnifierModel {
    /// Stock families, as configured.
    pub fn from_config(config: &ModelConfig, seed: u64) -> Result<Self> {
        if !config.encoder.family.supports(config.decoder) {
            return Err(Error::InvalidConfig(format!(
                "{:?} decoder does not pair with {:?} encoder",
                config.decoder, config.encoder.family
            )));
        }
        build_magnifier(config, &StockFactory, &StockFactory, seed)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn is_magnifier(&self) -> bool {
        self.patch_encoder.is_some()
    }

    pub fn parameter_count(&self) -> ParamCount {
        let global_encoder = self.params.numel_with_prefix(&format!("{GLOBAL_PREFIX}."));
        let patch_encoder = self.params.numel_with_prefix(&format!("{PATCH_PREFIX}."));
        let decoder = self.params.numel_with_prefix(&format!("{DECODER_PREFIX}."));
        ParamCount {
            global_encoder,
            patch_encoder,
            decoder,
            total: self.params.numel(),
        }
    }

    fn check_batch(&self, shape: &[usize]) -> Result<()> {
        let c = self.config.encoder.in_channels;
        let (h, w) = (self.config.image_h, self.config.image_w);
        if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
            let b = shape.first().copied().unwrap_or(0);
            return Err(Error::shape(
                "model input (B, C, H, W)",
                &[b, c, h, w],
                shape,
            ));
        }
        Ok(())
    }

    /// Per-level fused features for an NCHW batch already on `g`.
    pub fn features_graph<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Vec<Var<'g>>> {
        self.check_batch(&x.shape())?;
        let global = self.global_encoder.forward(g, &self.params, x);
        let Some(patch_encoder) = &self.patch_encoder else {
            return Ok(global);
        };
        let (rows, cols) = (self.grid.n_rows(), self.grid.n_cols());
        let local = patch_encoder.forward(g, &self.params, x.crop_patches(rows, cols));
        if local.len() != global.len() {
            return Err(Error::IncompatibleShapes(format!(
                "global encoder produced {} levels, patch encoder {}",
                global.len(),
                local.len()
            )));
        }
        global
            .into_iter()
            .zip(local)
            .map(|(a, b)| {
                let b = b.recompose_patches(rows, cols);
                let (sa, sb) = (a.shape(), b.shape());
                if sa != sb {
                    return Err(Error::IncompatibleShapes(format!(
                        "global level {sa:?} vs recomposed patch level {sb:?}"
                    )));
                }
                Ok(Var::concat_channels(&[a, b]))
            })
            .collect()
    }

    /// `(B, num_classes, H, W)` logits for an NCHW batch already on `g`.
    pub fn logits_graph<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        let features = self.features_graph(g, x)?;
        Ok(self
            .decoder
            .forward(g, &self.params, &features, (shape[2], shape[3])))
    }

    /// Inference on a channel-last batch `(B, H, W, C)`, returning
    /// channel-last logits `(B, H, W, num_classes)`.
    pub fn forward(&self, batch: ArrayView4<'_, f32>) -> Result<Array4<f32>> {
        let g = Graph::inference();
        let x = g.constant(nhwc_to_nchw(batch));
        let logits = self.logits_graph(&g, x)?;
        nchw_to_nhwc(&logits.value())
    }

    /// Fused NCHW features per level, inference mode.
    pub fn fused_features(&self, batch: ArrayView4<'_, f32>) -> Result<Vec<Tensor>> {
        let g = Graph::inference();
        let x = g.constant(nhwc_to_nchw(batch));
        Ok(self
            .features_graph(&g, x)?
            .into_iter()
            .map(|v| v.value().as_ref().clone())
            .collect())
    }

    /// Per-pixel argmax of the two classes; 1 = burned.
    pub fn predict_mask(&self, image: ArrayView3<'_, f32>) -> Result<BinaryMask> {
        let batch = image.insert_axis(Axis(0));
        let logits = self.forward(batch)?;
        Ok(mask_from_logits(logits.index_axis(Axis(0), 0)))
    }

    /// Masks for a channel-last batch.
    pub fn predict_masks(&self, batch: ArrayView4<'_, f32>) -> Result<Vec<BinaryMask>> {
        let logits = self.forward(batch)?;
        Ok(logits.outer_iter().map(mask_from_logits).collect())
    }
}

/// Argmax over the last axis of `(H, W, 2)` logits; ties go to class 0.
pub fn mask_from_logits(logits: ArrayView3<'_, f32>) -> BinaryMask {
    let (h, w, _) = logits.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        u8::from(
            logits[[r, c, crate::loss::RARE_CLASS]] > logits[[r, c, crate::loss::COMMON_CLASS]],
        )
    })
}

/// Zero-filled NCHW tensor, handy for shape probes.
pub fn zeros_nchw(b: usize, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::zeros(IxDyn(&[b, c, h, w]))
}
