//! Index-plus-Otsu baseline on synthetic scenes, with and without bare-soil
//! confounders.

use magnifier::datasets::{synthesize_dataset, SynthSpec};
use magnifier::indices::{
    compute_index, otsu_threshold, segment_by_index, SensorProfile, SpectralIndex, OTSU_BINS,
};
use magnifier::metrics::{confusion_counts, ConfusionCounts};

fn main() -> magnifier::Result<()> {
    let bands = SensorProfile::Sentinel2.band_map();
    for (name, spec) in [
        (
            "clean scenes",
            SynthSpec {
                n_samples: 8,
                ..SynthSpec::high_separability()
            },
        ),
        (
            "with bare soil",
            SynthSpec {
                n_samples: 8,
                ..SynthSpec::default()
            },
        ),
    ] {
        let data = synthesize_dataset(&spec, 3)?;
        println!("{name}:");
        for index in [
            SpectralIndex::Nbr,
            SpectralIndex::Nbr2,
            SpectralIndex::Bais2,
        ] {
            let mut counts = ConfusionCounts::default();
            for s in &data.samples {
                let mask =
                    segment_by_index(s.image.view(), index, &bands, index.burned_polarity())?;
                counts += confusion_counts(mask.view(), s.mask.view())?;
            }
            println!(
                "  {:<6} F1 {:.3}  IoU {:.3}",
                index.to_string(),
                counts.f1(),
                counts.iou()
            );
        }
    }

    let scene = &synthesize_dataset(
        &SynthSpec {
            n_samples: 1,
            ..SynthSpec::default()
        },
        0,
    )?
    .samples[0];
    let nbr = compute_index(scene.image.view(), SpectralIndex::Nbr, &bands)?;
    println!(
        "Otsu threshold on one NBR raster: {:.4}",
        otsu_threshold(nbr.data.view(), OTSU_BINS)?
    );

    let landsat = SensorProfile::Landsat8.band_map();
    let eight = ndarray::Array3::<f32>::zeros((4, 4, 8));
    if let Err(e) = compute_index(eight.view(), SpectralIndex::Bais2, &landsat) {
        println!("BAIS2 on Landsat-8: {e}");
    }
    Ok(())
}
