//! Command-line front end. [`run_cli`] parses arguments, runs one
//! subcommand and maps the outcome to an exit code.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::datasets::{load_manifest, synthesize_to_dir, Dataset, FoldStrategy, SynthSpec};
use crate::error::{Error, Result};
use crate::harness::{
    cross_validate, train, transfer_evaluate, Checkpoint, ExperimentRecord, RunConfig,
};
use crate::indices::{segment_by_index, Polarity, SensorProfile, SpectralIndex};
use crate::metrics::{
    aggregate_folds, confusion_counts, mean_rank, FoldMetrics, ScoreTable, TieMethod,
};
use crate::model::{Architecture, DecoderFamily, EncoderFamily, EncoderSize};
use crate::BinaryMask;

#[derive(Debug, Parser)]
#[command(
    name = "magnifier",
    version,
    about = "Burned-area segmentation with global and patch encoders"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the training folds of one round and save the best checkpoint.
    Train(TrainArgs),
    /// Train and test every round of a K-fold split.
    CrossValidate(CvArgs),
    /// Score a checkpoint on a dataset, optionally exporting masks.
    Evaluate(EvalArgs),
    /// Score a checkpoint on a dataset from a different source.
    Transfer(EvalArgs),
    /// Spectral index plus Otsu threshold baseline.
    SegmentIndex(IndexArgs),
    /// Write a synthetic dataset with manifest.
    SynthData(SynthArgs),
    /// Mean rank over experiment records or a score table.
    Report(ReportArgs),
}

fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// compact-cnn, residual-cnn or hierarchical-transformer.
    #[arg(long, value_parser = kebab::<EncoderFamily>)]
    family: Option<EncoderFamily>,
    /// small or large.
    #[arg(long, value_parser = kebab::<EncoderSize>)]
    size: Option<EncoderSize>,
    /// single or magnifier.
    #[arg(long, value_parser = kebab::<Architecture>)]
    architecture: Option<Architecture>,
    /// deep-lab, u-net or all-mlp.
    #[arg(long, value_parser = kebab::<DecoderFamily>)]
    decoder: Option<DecoderFamily>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    /// random or by-region.
    #[arg(long, value_parser = kebab::<FoldStrategy>)]
    strategy: Option<FoldStrategy>,
    #[arg(long)]
    fold_seed: Option<u64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let m = &mut cfg.model;
        m.family = self.family.unwrap_or(m.family);
        m.size = self.size.unwrap_or(m.size);
        m.architecture = self.architecture.unwrap_or(m.architecture);
        m.decoder = self.decoder.or(m.decoder);
        m.patch = self.patch.unwrap_or(m.patch);
        let t = &mut cfg.train;
        t.learning_rate = self.lr.or(t.learning_rate);
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.horizon = self.horizon.or(t.horizon);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.seed = self.seed.unwrap_or(t.seed);
        let d = &mut cfg.data;
        d.manifest = self.manifest.clone().or(d.manifest.take());
        d.k = self.k.unwrap_or(d.k);
        d.strategy = self.strategy.unwrap_or(d.strategy);
        d.fold_seed = self.fold_seed.unwrap_or(d.fold_seed);
        Ok(cfg)
    }
}

fn load_dataset(manifest: Option<&Path>) -> Result<Dataset> {
    let path = manifest
        .ok_or_else(|| Error::Config("no manifest given (--manifest or [data] manifest)".into()))?;
    load_manifest(path)?.load()
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Round to run: tests this fold, validates on the next.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-step and per-epoch log as JSON.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Experiment record (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Restrict to the test samples of this fold.
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    fold_seed: u64,
    #[arg(long, default_value = "random", value_parser = kebab::<FoldStrategy>)]
    strategy: FoldStrategy,
}

impl SplitArgs {
    fn indices(&self, data: &Dataset) -> Result<(usize, Vec<usize>)> {
        match self.fold {
            Some(f) if f >= self.k => Err(Error::Config(format!(
                "fold {f} out of range for k = {}",
                self.k
            ))),
            Some(f) => Ok((
                f,
                data.folds(self.k, self.fold_seed, self.strategy)?
                    .members(f),
            )),
            None => Ok((0, (0..data.len()).collect())),
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Write one PNG mask (0 / 255) per sample here.
    #[arg(long)]
    masks_out: Option<PathBuf>,
    /// Metric report (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// nbr, nbr2 or bais2.
    #[arg(long, value_parser = kebab::<SpectralIndex>)]
    index: SpectralIndex,
    /// s2 or l8.
    #[arg(long, value_parser = kebab::<SensorProfile>)]
    profile: SensorProfile,
    /// burned-low or burned-high; defaults to the index's usual side.
    #[arg(long, value_parser = kebab::<Polarity>)]
    polarity: Option<Polarity>,
    /// Report per fold of a K-fold split instead of one pooled score.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    fold_seed: u64,
    #[arg(long)]
    masks_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value = "synthetic")]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 128)]
    tile: usize,
    #[arg(long, default_value_t = 12)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    burned_fraction: Option<f64>,
    #[arg(long)]
    separation: Option<f32>,
    #[arg(long)]
    noise: Option<f32>,
    #[arg(long)]
    regions: Option<usize>,
    /// Most bare-soil patches per image (0 disables them).
    #[arg(long)]
    confounders: Option<usize>,
    /// Offset every band by this fraction of its mean (alternating sign).
    #[arg(long)]
    band_shift: Option<f32>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Experiment records from cross-validate.
    #[arg(long, num_args = 1..)]
    records: Vec<PathBuf>,
    /// Long-format CSV: algorithm,column,score.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// average or min.
    #[arg(long, default_value = "average", value_parser = kebab::<TieMethod>)]
    ties: TieMethod,
    /// Write the combined score table here.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

/// Runs the CLI on `args` (program name first). Returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn write_mask_png(dir: &Path, id: &str, mask: &BinaryMask) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (h, w) = mask.dim();
    let pixels: Vec<u8> = mask.iter().map(|&v| v * 255).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, pixels).expect("mask buffer size");
    img.save(dir.join(format!("{id}.png")))?;
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => {
            let cfg = a.run.resolve()?;
            let data = load_dataset(cfg.data.manifest.as_deref())?;
            let tc = cfg.train_config(data.channels(), data.tile)?;
            let folds = data.folds(cfg.data.k, cfg.data.fold_seed, cfg.data.strategy)?;
            if a.fold >= folds.k {
                return Err(Error::Config(format!(
                    "fold {} out of range for k = {}",
                    a.fold, folds.k
                )));
            }
            let round = folds.round(a.fold);
            let outcome = train(&tc, &data, &round.train, &round.validation)?;
            outcome.checkpoint.save(&a.out)?;
            if let Some(p) = &a.log {
                write_json(p, &outcome.log)?;
            }
            let test = outcome
                .checkpoint
                .evaluate(&data, &round.test, tc.batch_size)?;
            println!(
                "best epoch {} (validation IoU {:.4}); test fold {}: F1 {:.4}, IoU {:.4}",
                outcome.log.best_epoch,
                outcome.log.best_val_iou,
                round.test_fold,
                test.f1(),
                test.iou()
            );
        }
        Command::CrossValidate(a) => {
            let cfg = a.run.resolve()?;
            let data = load_dataset(cfg.data.manifest.as_deref())?;
            let tc = cfg.train_config(data.channels(), data.tile)?;
            let record = cross_validate(&tc, &data, &cfg.cv_options(a.checkpoint_dir.clone()))?;
            write_json(&a.out, &record)?;
            print!("{}", record.report.to_text());
        }
        Command::Evaluate(a) | Command::Transfer(a) => {
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let data = load_manifest(&a.manifest)?.load()?;
            let (fold, indices) = a.split.indices(&data)?;
            let report = transfer_evaluate(&ckpt, &data, &indices, fold)?;
            if let Some(dir) = &a.masks_out {
                for &i in &indices {
                    let s = &data.samples[i];
                    write_mask_png(dir, &s.id, &ckpt.predict(s.image.view())?)?;
                }
            }
            if let Some(p) = &a.out {
                write_json(p, &report)?;
            }
            print!("{}", report.to_text());
        }
        Command::SegmentIndex(a) => {
            let data = load_manifest(&a.manifest)?.load()?;
            let bands = a.profile.band_map();
            let polarity = a.polarity.unwrap_or(a.index.burned_polarity());
            let assignment = match a.k {
                Some(k) => data.folds(k, a.fold_seed, FoldStrategy::Random)?.assignment,
                None => vec![0; data.len()],
            };
            let n_folds = a.k.unwrap_or(1);
            let mut counts = vec![Default::default(); n_folds];
            for (s, &f) in data.samples.iter().zip(&assignment) {
                let mask = segment_by_index(s.image.view(), a.index, &bands, polarity)?;
                counts[f] += confusion_counts(mask.view(), s.mask.view())?;
                if let Some(dir) = &a.masks_out {
                    write_mask_png(dir, &s.id, &mask)?;
                }
            }
            let report = aggregate_folds(
                counts
                    .into_iter()
                    .enumerate()
                    .map(|(f, c)| FoldMetrics::from_counts(f, c))
                    .collect(),
            );
            if let Some(p) = &a.out {
                write_json(p, &report)?;
            }
            print!("{}", report.to_text());
        }
        Command::SynthData(a) => {
            let defaults = SynthSpec::default();
            let spec = SynthSpec {
                n_samples: a.samples,
                tile: a.tile,
                channels: a.channels,
                burned_fraction: a.burned_fraction.unwrap_or(defaults.burned_fraction),
                separation: a.separation.unwrap_or(defaults.separation),
                noise: a.noise.unwrap_or(defaults.noise),
                regions: a.regions.unwrap_or(defaults.regions),
                max_confounders: a.confounders.unwrap_or(defaults.max_confounders),
                ..defaults
            };
            let spec = match a.band_shift {
                Some(s) => spec.with_band_shift(s)?,
                None => spec,
            };
            let index = synthesize_to_dir(&spec, a.seed, &a.out)?;
            println!(
                "wrote {} samples ({} channels, {}x{}) to {}",
                index.len(),
                index.channels(),
                index.tile,
                index.tile,
                index.root.join(crate::datasets::MANIFEST_FILE).display()
            );
        }
        Command::Report(a) => {
            let mut table = match &a.scores {
                Some(p) => ScoreTable::read_csv(
                    fs::File::open(p).map_err(|_| Error::MissingFile(p.clone()))?,
                )?,
                None => ScoreTable::default(),
            };
            for p in &a.records {
                let bytes = fs::read(p).map_err(|_| Error::MissingFile(p.clone()))?;
                let record: ExperimentRecord = serde_json::from_slice(&bytes)?;
                let name = record.algorithm();
                table.push(
                    &name,
                    &format!("{}/F1", record.options.dataset),
                    record.report.f1.mean * 100.0,
                );
                table.push(
                    &name,
                    &format!("{}/IoU", record.options.dataset),
                    record.report.iou.mean * 100.0,
                );
            }
            if table.algorithms.is_empty() {
                return Err(Error::Config("report needs --records or --scores".into()));
            }
            if table.scores.iter().flatten().any(|v| v.is_nan()) {
                return Err(Error::Config(
                    "score table has gaps; every algorithm needs every column".into(),
                ));
            }
            if let Some(p) = &a.out_csv {
                table.write_csv(fs::File::create(p)?)?;
            }
            let ranks = mean_rank(&table, a.ties);
            println!("algorithm\t{}\tMR", table.columns.join("\t"));
            for (i, name) in table.algorithms.iter().enumerate() {
                let cells: Vec<String> =
                    table.scores[i].iter().map(|v| format!("{v:.1}")).collect();
                println!("{name}\t{}\t{:.1}", cells.join("\t"), ranks[i]);
            }
        }
    }
    Ok(())
}
