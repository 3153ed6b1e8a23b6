use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{check_profile, train, Checkpoint, TrainConfig};
use crate::datasets::{ChannelStats, Dataset, FoldSplit, FoldStrategy, Round};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_folds, FoldMetrics, MetricReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub strategy: FoldStrategy,
    pub fold_seed: u64,
    /// Best checkpoint of each round is written here when set.
    pub checkpoint_dir: Option<PathBuf>,
    /// Label used when records are ranked against each other.
    pub dataset: String,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k: 5,
            strategy: FoldStrategy::Random,
            fold_seed: 0,
            checkpoint_dir: None,
            dataset: "dataset".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: Round,
    pub best_epoch: usize,
    pub best_val_iou: f64,
    pub stats: ChannelStats,
    pub test: FoldMetrics,
    pub checkpoint: Option<PathBuf>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: TrainConfig,
    pub options: CvOptions,
    pub folds: FoldSplit,
    pub rounds: Vec<RoundRecord>,
    pub report: MetricReport,
    pub wall_clock_secs: f64,
}

impl ExperimentRecord {
    /// Short name for the trained configuration.
    pub fn algorithm(&self) -> String {
        let m = &self.config.model;
        format!(
            "{}-{}-{}-{}",
            label(&m.architecture),
            label(&m.encoder.family),
            label(&m.encoder.size),
            label(&m.decoder)
        )
    }
}

/// Serialized name of a unit enum variant.
pub(crate) fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// `k` rounds with fresh weights each; round `i` tests fold `i`, validates
/// on fold `i + 1` and trains on the rest.
pub fn cross_validate(
    cfg: &TrainConfig,
    data: &Dataset,
    options: &CvOptions,
) -> Result<ExperimentRecord> {
    let started = Instant::now();
    let folds = data.folds(options.k, options.fold_seed, options.strategy)?;
    let mut rounds = Vec::with_capacity(options.k);
    for round in folds.rounds() {
        let t0 = Instant::now();
        let mut round_cfg = cfg.clone();
        round_cfg.seed = cfg.seed.wrapping_add(round.test_fold as u64);
        log::info!(
            "round {}: validation fold {}, {} training samples",
            round.test_fold,
            round.validation_fold,
            round.train.len()
        );
        let outcome = train(&round_cfg, data, &round.train, &round.validation)?;
        let counts = outcome
            .checkpoint
            .evaluate(data, &round.test, cfg.batch_size)?;
        let checkpoint = match &options.checkpoint_dir {
            Some(dir) => {
                let path = dir.join(format!("round-{}.ckpt", round.test_fold));
                outcome.checkpoint.save(&path)?;
                Some(path)
            }
            None => None,
        };
        rounds.push(RoundRecord {
            test: FoldMetrics::from_counts(round.test_fold, counts),
            best_epoch: outcome.log.best_epoch,
            best_val_iou: outcome.log.best_val_iou,
            stats: outcome.checkpoint.stats.clone(),
            checkpoint,
            wall_clock_secs: t0.elapsed().as_secs_f64(),
            round,
        });
    }
    let report = aggregate_folds(rounds.iter().map(|r| r.test.clone()).collect());
    Ok(ExperimentRecord {
        config: cfg.clone(),
        options: options.clone(),
        folds,
        rounds,
        report,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Scores a trained checkpoint on another dataset without touching its
/// weights. The report holds a single fold entry labelled `fold_id`.
pub fn transfer_evaluate(
    checkpoint: &Checkpoint,
    data: &Dataset,
    indices: &[usize],
    fold_id: usize,
) -> Result<MetricReport> {
    check_profile(checkpoint.model.config(), data)?;
    if indices.is_empty() {
        return Err(Error::InvalidConfig(
            "transfer evaluation needs at least one sample".into(),
        ));
    }
    let counts = checkpoint.evaluate(data, indices, super::DEFAULT_BATCH)?;
    Ok(aggregate_folds(vec![FoldMetrics::from_counts(
        fold_id, counts,
    )]))
}
