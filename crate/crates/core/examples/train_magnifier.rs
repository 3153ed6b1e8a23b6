//! Trains a compact-CNN Magnifier on synthetic scenes and scores one test fold.
//!
//! cargo run --release --example train_magnifier -- [epochs] [learning_rate] [single|magnifier]

use magnifier::datasets::{synthesize_dataset, FoldStrategy, SynthSpec};
use magnifier::harness::{train, TrainConfig};
use magnifier::model::{Architecture, EncoderFamily, EncoderSize, ModelConfig};

fn main() -> magnifier::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().and_then(|s| s.parse().ok()).unwrap_or(20);
    let lr = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let arch = match args.get(2).map(String::as_str) {
        Some("single") => Architecture::Single,
        _ => Architecture::Magnifier,
    };

    let data = synthesize_dataset(&SynthSpec::default(), 7)?;
    let round = data.folds(5, 0, FoldStrategy::Random)?.round(0);
    let model = ModelConfig::new(EncoderFamily::CompactCnn, EncoderSize::Small, arch, 12, 128);
    let mut cfg = TrainConfig::new(model).with_epochs(epochs);
    cfg.learning_rate = lr;

    let outcome = train(&cfg, &data, &round.train, &round.validation)?;
    let test = outcome
        .checkpoint
        .evaluate(&data, &round.test, cfg.batch_size)?;
    println!(
        "{arch:?}: best epoch {} (val IoU {:.3}), test IoU {:.3}, F1 {:.3}, {:.0}s",
        outcome.log.best_epoch,
        outcome.log.best_val_iou,
        test.iou(),
        test.f1(),
        outcome.log.wall_clock_secs
    );
    Ok(())
}
