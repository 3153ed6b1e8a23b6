//! Full K-fold run on a small synthetic set; writes the experiment record.
//!
//! cargo run --release --example cross_validate -- [epochs]

use magnifier::datasets::{synthesize_dataset, SynthSpec};
use magnifier::harness::{cross_validate, CvOptions, TrainConfig};
use magnifier::model::{Architecture, EncoderFamily, EncoderSize, ModelConfig};

fn main() -> magnifier::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);

    let data = synthesize_dataset(
        &SynthSpec {
            n_samples: 20,
            tile: 64,
            ..SynthSpec::default()
        },
        2,
    )?;
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
    .with_epochs(epochs);
    let record = cross_validate(
        &cfg,
        &data,
        &CvOptions {
            dataset: "synthetic".into(),
            ..CvOptions::default()
        },
    )?;

    print!("{}", record.report.to_text());
    let out = std::env::temp_dir().join("magnifier-cv.json");
    std::fs::write(&out, serde_json::to_vec_pretty(&record)?)?;
    println!(
        "record for {} written to {}",
        record.algorithm(),
        out.display()
    );
    Ok(())
}
