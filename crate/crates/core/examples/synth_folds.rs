//! Writes a synthetic dataset, reloads it from its manifest and shows the
//! fold rotation for both split strategies.

use magnifier::datasets::{
    load_manifest, synthesize_to_dir, ChannelStats, FoldStrategy, SynthSpec,
};

fn main() -> magnifier::Result<()> {
    let dir = std::env::temp_dir().join("magnifier-synth-folds");
    let spec = SynthSpec {
        n_samples: 20,
        tile: 64,
        regions: 5,
        ..SynthSpec::default()
    };
    let index = synthesize_to_dir(&spec, 1, &dir)?;
    let data = load_manifest(&dir)?.load()?;
    println!(
        "{} samples from {} ({:.1}% burned pixels)",
        index.len(),
        dir.display(),
        100.0 * data.positive_fraction()
    );

    for strategy in [FoldStrategy::Random, FoldStrategy::ByRegion] {
        let split = data.folds(5, 0, strategy)?;
        println!("{strategy:?}: fold sizes {:?}", split.fold_sizes());
        for round in split.rounds() {
            let regions: std::collections::BTreeSet<&str> = round
                .test
                .iter()
                .map(|&i| data.samples[i].region.as_str())
                .collect();
            println!(
                "  round {}: validate fold {}, train {:>2}, test regions {:?}",
                round.test_fold,
                round.validation_fold,
                round.train.len(),
                regions
            );
        }
    }

    let round = data.folds(5, 0, FoldStrategy::Random)?.round(0);
    let stats = ChannelStats::compute(round.train.iter().map(|&i| data.samples[i].image.view()))?;
    println!(
        "training-fold means: {:?}",
        stats
            .mean
            .iter()
            .map(|m| format!("{m:.3}"))
            .collect::<Vec<_>>()
    );
    Ok(())
}
