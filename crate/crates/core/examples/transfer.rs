//! Trains on one synthetic source and scores the checkpoint on a clean and a
//! radiometrically shifted target.

use magnifier::datasets::{synthesize_dataset, SynthSpec};
use magnifier::harness::{train, transfer_evaluate, TrainConfig};
use magnifier::model::{Architecture, EncoderFamily, EncoderSize, ModelConfig};

fn main() -> magnifier::Result<()> {
    let spec = SynthSpec {
        n_samples: 24,
        tile: 64,
        ..SynthSpec::default()
    };
    let source = synthesize_dataset(&spec, 10)?;
    let round = source
        .folds(5, 0, magnifier::datasets::FoldStrategy::Random)?
        .round(0);
    let model = ModelConfig::new(
        EncoderFamily::CompactCnn,
        EncoderSize::Small,
        Architecture::Magnifier,
        12,
        64,
    )
    .with_patch(32, 32);
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        ..TrainConfig::new(model)
    }
    .with_epochs(15);
    let ckpt = train(&cfg, &source, &round.train, &round.validation)?.checkpoint;

    let target = SynthSpec {
        n_samples: 8,
        ..spec
    };
    let everything: Vec<usize> = (0..8).collect();
    for shift in [0.0, 0.1, 0.25, 0.5] {
        let shifted = synthesize_dataset(&target.clone().with_band_shift(shift)?, 11)?;
        let report = transfer_evaluate(&ckpt, &shifted, &everything, 0)?;
        println!("band shift {shift:>4}: IoU {:.3}", report.iou.mean);
    }

    let landsat = synthesize_dataset(
        &SynthSpec {
            n_samples: 2,
            channels: 8,
            ..target
        },
        12,
    )?;
    if let Err(e) = transfer_evaluate(&ckpt, &landsat, &[0, 1], 0) {
        println!("Landsat-8 target: {e}");
    }
    Ok(())
}
