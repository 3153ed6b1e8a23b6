//! Parameter counts and analytic FLOPs for every encoder family, single and
//! dual-branch.
//!
//! cargo run --release --example model_summary -- [tile] [patch]

use magnifier::metrics::model_flops;
use magnifier::model::{Architecture, EncoderFamily, EncoderSize, MagnifierModel, ModelConfig};

fn main() -> magnifier::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let tile = args.first().copied().unwrap_or(128);
    let patch = args.get(1).copied().unwrap_or(64);

    println!(
        "{:<26} {:<10} {:>10} {:>10} {:>10} {:>9}",
        "encoder", "variant", "encoders", "decoder", "total", "MFLOPs"
    );
    for family in EncoderFamily::ALL {
        for (label, size, arch) in [
            ("small", EncoderSize::Small, Architecture::Single),
            ("magnifier", EncoderSize::Small, Architecture::Magnifier),
            ("large", EncoderSize::Large, Architecture::Single),
        ] {
            let cfg = ModelConfig::new(family, size, arch, 12, tile).with_patch(patch, patch);
            let model = MagnifierModel::from_config(&cfg, 0)?;
            let p = model.parameter_count();
            println!(
                "{:<26} {:<10} {:>10} {:>10} {:>10} {:>9.1}",
                format!("{family:?}/{:?}", cfg.decoder),
                label,
                p.encoders(),
                p.decoder,
                p.total,
                model_flops(&model)? as f64 / 1e6
            );
        }
    }
    Ok(())
}
