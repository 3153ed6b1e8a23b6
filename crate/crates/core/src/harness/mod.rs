//! Training, checkpoint selection, cross-validation and transfer evaluation.

mod checkpoint;
mod config;
mod experiment;

use std::path::PathBuf;
use std::time::Instant;

use magnifier_nn::optim::{AdamW, PolynomialDecay};
use magnifier_nn::{Graph, ParamStore, Tensor};
use ndarray::{Array3, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use config::{DataSection, ModelSection, RunConfig, TrainSection};
pub use experiment::{cross_validate, transfer_evaluate, CvOptions, ExperimentRecord, RoundRecord};

use crate::datasets::{normalize, ChannelStats, Dataset};
use crate::error::{Error, Result};
use crate::loss::{auf_loss_var, LossConfig, COMMON_CLASS, RARE_CLASS};
use crate::metrics::ConfusionCounts;
use crate::model::{DecoderFamily, EncoderFamily, MagnifierModel, ModelConfig};
use crate::BinaryMask;

/// Scheduler horizon, in epochs.
pub const DEFAULT_HORIZON: usize = 55;
pub const DEFAULT_BATCH: usize = 4;

/// Starting learning rate for an encoder/decoder pairing.
pub fn default_learning_rate(model: &ModelConfig) -> f64 {
    match (model.encoder.family, model.decoder) {
        (EncoderFamily::HierarchicalTransformer, _) => 1e-3,
        (_, DecoderFamily::UNet) => 1e-4,
        (EncoderFamily::ResidualCnn, _) => 1e-2,
        (EncoderFamily::CompactCnn, _) => 1e-4,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Epochs actually run.
    pub epochs: usize,
    /// Epoch at which the polynomial schedule reaches zero.
    pub schedule_horizon: usize,
    pub schedule_power: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub device: String,
    /// Where to write the current weights if the loss goes non-finite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_dump: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            learning_rate: default_learning_rate(&model),
            model,
            loss: LossConfig::default(),
            weight_decay: 0.01,
            epochs: DEFAULT_HORIZON,
            schedule_horizon: DEFAULT_HORIZON,
            schedule_power: 1.0,
            batch_size: DEFAULT_BATCH,
            seed: 0,
            device: "cpu".into(),
            divergence_dump: None,
        }
    }

    /// Runs `epochs` epochs with the schedule ending at the same point.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self.schedule_horizon = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.schedule_horizon == 0 {
            return Err(Error::InvalidConfig(
                "schedule horizon must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if self.device != "cpu" {
            log::warn!("device `{}` not available, running on cpu", self.device);
        }
        Ok(())
    }

    pub fn schedule(&self) -> PolynomialDecay {
        PolynomialDecay::new(
            self.learning_rate as f32,
            self.schedule_horizon,
            self.schedule_power as f32,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub val_iou: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_iou: f64,
    pub wall_clock_secs: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation IoU.
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Normalized NCHW copies of the samples a round touches.
pub(crate) struct Prepared {
    images: Vec<Option<Tensor>>,
    masks: Vec<BinaryMask>,
    chw: [usize; 3],
}

impl Prepared {
    pub(crate) fn new(data: &Dataset, stats: &ChannelStats, indices: &[usize]) -> Result<Self> {
        let mut images = vec![None; data.len()];
        let mut masks = vec![BinaryMask::zeros((0, 0)); data.len()];
        let mut chw = [0; 3];
        for &i in indices {
            if images[i].is_some() {
                continue;
            }
            let s = &data.samples[i];
            let (h, w, c) = s.image.dim();
            chw = [c, h, w];
            let norm = normalize(s.image.view(), stats)?;
            let nchw = norm
                .permuted_axes([2, 0, 1])
                .as_standard_layout()
                .into_owned();
            images[i] = Some(nchw.into_dyn());
            masks[i] = s.mask.clone();
        }
        Ok(Self { images, masks, chw })
    }

    pub(crate) fn batch(&self, indices: &[usize]) -> (Tensor, Array3<u8>) {
        let [c, h, w] = self.chw;
        let mut x = Vec::with_capacity(indices.len() * c * h * w);
        let mut y = Vec::with_capacity(indices.len() * h * w);
        for &i in indices {
            let img = self.images[i].as_ref().expect("prepared sample");
            x.extend_from_slice(img.as_slice().expect("standard layout"));
            y.extend(self.masks[i].iter().copied());
        }
        (
            Tensor::from_shape_vec(IxDyn(&[indices.len(), c, h, w]), x).expect("batch shape"),
            Array3::from_shape_vec((indices.len(), h, w), y).expect("mask shape"),
        )
    }

    pub(crate) fn mask(&self, i: usize) -> &BinaryMask {
        &self.masks[i]
    }
}

/// Argmax masks from `(B, 2, H, W)` logits.
pub(crate) fn masks_from_nchw(logits: &Tensor) -> Vec<BinaryMask> {
    let s = logits.shape();
    let (b, h, w) = (s[0], s[2], s[3]);
    let data = logits.as_slice().expect("standard layout");
    let plane = h * w;
    (0..b)
        .map(|bi| {
            let base = bi * 2 * plane;
            let common = &data[base + COMMON_CLASS * plane..][..plane];
            let rare = &data[base + RARE_CLASS * plane..][..plane];
            let v = common
                .iter()
                .zip(rare)
                .map(|(c, r)| u8::from(r > c))
                .collect();
            BinaryMask::from_shape_vec((h, w), v).expect("mask shape")
        })
        .collect()
}

/// Pooled confusion counts of `model` over prepared samples.
pub(crate) fn evaluate_prepared(
    model: &MagnifierModel,
    prepared: &Prepared,
    indices: &[usize],
    batch_size: usize,
) -> Result<ConfusionCounts> {
    let mut total = ConfusionCounts::default();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, _) = prepared.batch(chunk);
        let g = Graph::inference();
        let logits = model.logits_graph(&g, g.constant(x))?;
        for (pred, &i) in masks_from_nchw(&logits.value()).iter().zip(chunk) {
            total += crate::metrics::confusion_counts(pred.view(), prepared.mask(i).view())?;
        }
    }
    Ok(total)
}

fn check_profile(model: &ModelConfig, data: &Dataset) -> Result<()> {
    let found = data.channels();
    if found != model.encoder.in_channels {
        return Err(Error::IncompatibleProfile {
            expected: model.encoder.in_channels,
            found,
        });
    }
    if data.tile != model.image_h || data.tile != model.image_w {
        return Err(Error::shape(
            "dataset tile",
            &[model.image_h, model.image_w],
            &[data.tile, data.tile],
        ));
    }
    Ok(())
}

/// Trains fresh weights on `train_idx`, scoring `val_idx` after every epoch
/// and keeping the weights with the highest validation IoU (earliest on
/// ties). Channel statistics come from `train_idx` alone.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InvalidConfig(
            "training and validation splits must be non-empty".into(),
        ));
    }
    check_profile(&cfg.model, data)?;
    let started = Instant::now();
    let stats = ChannelStats::compute(train_idx.iter().map(|&i| data.samples[i].image.view()))?;
    let all: Vec<usize> = train_idx.iter().chain(val_idx).copied().collect();
    let prepared = Prepared::new(data, &stats, &all)?;

    let mut model = MagnifierModel::from_config(&cfg.model, cfg.seed)?;
    let mut opt = AdamW::new(0.9, 0.999, 1e-8, cfg.weight_decay as f32);
    let schedule = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, ParamStore)> = None;

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let mut order = train_idx.to_vec();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = prepared.batch(chunk);
            let g = Graph::new();
            let logits = model.logits_graph(&g, g.constant(x))?;
            let loss = if logits.value().iter().all(|v| v.is_finite()) {
                Some(auf_loss_var(logits, y.view(), &cfg.loss)?)
            } else {
                None
            };
            let value = loss.map_or(f32::NAN, |l| l.item());
            if let (Some(loss), true) = (loss, value.is_finite()) {
                let grads = g.backward(loss).params(model.params());
                opt.step(model.params_mut(), &grads, lr);
            } else {
                if let Some(path) = &cfg.divergence_dump {
                    let dump = Checkpoint::new(model, stats.clone(), epoch, f64::NAN);
                    dump.save(path)?;
                    log::error!("weights at divergence written to {}", path.display());
                }
                return Err(Error::DivergenceDetected {
                    epoch,
                    step,
                    loss: value,
                });
            }
            log::debug!("epoch {epoch} step {step} lr {lr:.3e} loss {value:.5}");
            log.steps.push(StepLog {
                epoch,
                step,
                lr: lr as f64,
                loss: value as f64,
            });
            loss_sum += value as f64;
            steps += 1;
        }
        let val = evaluate_prepared(&model, &prepared, val_idx, cfg.batch_size)?;
        let entry = EpochLog {
            epoch,
            lr: lr as f64,
            mean_loss: loss_sum / steps.max(1) as f64,
            val_iou: val.iou(),
            val_f1: val.f1(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, val IoU {:.4}, lr {:.2e}",
            entry.mean_loss,
            entry.val_iou,
            lr
        );
        if best.as_ref().is_none_or(|b| entry.val_iou > b.1) {
            best = Some((epoch, entry.val_iou, model.params().clone()));
        }
        log.epochs.push(entry);
    }

    let (best_epoch, best_val_iou) = match best {
        Some((epoch, iou, params)) => {
            model.params_mut().load_from(&params)?;
            (epoch, iou)
        }
        None => (
            0,
            evaluate_prepared(&model, &prepared, val_idx, cfg.batch_size)?.iou(),
        ),
    };
    log.best_epoch = best_epoch;
    log.best_val_iou = best_val_iou;
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model, stats, best_epoch, best_val_iou),
        log,
    })
}
