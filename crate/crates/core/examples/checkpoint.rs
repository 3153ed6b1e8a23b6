//! Saves a trained model, reloads it and exports a predicted mask as PNG.

use magnifier::datasets::{synthesize_dataset, SynthSpec};
use magnifier::harness::{train, Checkpoint, TrainConfig};
use magnifier::metrics::iou_score;
use magnifier::model::{Architecture, EncoderFamily, EncoderSize, ModelConfig};

fn main() -> magnifier::Result<()> {
    let data = synthesize_dataset(
        &SynthSpec {
            n_samples: 16,
            tile: 64,
            ..SynthSpec::default()
        },
        4,
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
    .with_epochs(20);
    let outcome = train(&cfg, &data, &(0..12).collect::<Vec<_>>(), &[12, 13, 14])?;

    let dir = std::env::temp_dir();
    let path = dir.join("magnifier-example.ckpt");
    outcome.checkpoint.save(&path)?;
    let ckpt = Checkpoint::load(&path)?;
    println!(
        "{} ({} bytes): epoch {}, validation IoU {:.3}",
        path.display(),
        std::fs::metadata(&path)?.len(),
        ckpt.epoch,
        ckpt.val_iou
    );

    let held_out = &data.samples[15];
    let mask = ckpt.predict(held_out.image.view())?;
    println!(
        "held-out IoU {:.3}",
        iou_score(mask.view(), held_out.mask.view())?
    );

    let (h, w) = mask.dim();
    let png =
        image::GrayImage::from_raw(w as u32, h as u32, mask.iter().map(|&v| v * 255).collect())
            .expect("mask size");
    let out = dir.join(format!("{}.png", held_out.id));
    png.save(&out)?;
    println!("mask written to {}", out.display());
    Ok(())
}
