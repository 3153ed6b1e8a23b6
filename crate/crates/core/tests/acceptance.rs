//! End-to-end acceptance checks. Each prints one PASS/FAIL line.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use magnifier::datasets::{synthesize_dataset, ChannelStats, FoldStrategy, SynthSpec};
use magnifier::harness::{cross_validate, train, transfer_evaluate, CvOptions, TrainConfig};
use magnifier::indices::{otsu_split, segment_by_index, SensorProfile, SpectralIndex, OTSU_BINS};
use magnifier::loss::{
    auf_loss, auf_loss_with_grad, modified_asymmetric_focal, LossConfig, ProbTargetBatch,
};
use magnifier::metrics::{confusion_counts, mean_rank_by_name, ConfusionCounts, TieMethod};
use magnifier::model::{Architecture, EncoderFamily, EncoderSize, MagnifierModel, ModelConfig};
use magnifier::patch_grid::{crop_into_patches, recompose_grid, validate_grid};
use magnifier::Error;
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Runs `body`, prints the verdict line and fails the test on FAIL.
fn criterion(n: u32, name: &str, limit: Duration, body: impl FnOnce() -> Result<String, String>) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let outcome = match outcome {
        Ok(detail) if elapsed > limit => {
            Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"))
        }
        other => other,
    };
    match &outcome {
        Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{elapsed:.1?}]"),
        Err(detail) => println!("FAIL criterion {n} ({name}): {detail} [{elapsed:.1?}]"),
    }
    assert!(outcome.is_ok(), "criterion {n} failed");
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

#[test]
fn criterion_1_patch_roundtrip() {
    criterion(1, "crop/recompose", Duration::from_secs(10), || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut combos = 0;
        while combos < 1000 {
            let (h, w) = (rng.random_range(1..97), rng.random_range(1..97));
            let (ph, pw) = (rng.random_range(1..=h), rng.random_range(1..=w));
            let Ok(grid) = validate_grid(w, h, pw, ph) else {
                continue;
            };
            let c = rng.random_range(1..5);
            let img = Array3::from_shape_fn((h, w, c), |_| rng.random::<f32>());
            let mut patches = crop_into_patches(img.view(), &grid).map_err(|e| e.to_string())?;
            patches.shuffle(&mut rng);
            let back = recompose_grid(&patches, &grid).map_err(|e| e.to_string())?;
            check(back.data == img, || {
                format!("roundtrip differs for {h}x{w} / {ph}x{pw}")
            })?;
            combos += 1;
        }

        let grid = validate_grid(8, 8, 4, 4).unwrap();
        let img = Array3::from_shape_fn((8, 8, 3), |(y, x, k)| (y * 64 + x * 8 + k) as f32);
        let patches = crop_into_patches(img.view(), &grid).unwrap();
        let mut order = [0usize, 1, 2, 3];
        let mut perms = 0;
        loop {
            let list: Vec<_> = order.iter().map(|&i| patches[i].clone()).collect();
            check(recompose_grid(&list, &grid).unwrap().data == img, || {
                format!("order {order:?} misplaced")
            })?;
            perms += 1;
            // next lexicographic permutation
            let Some(i) = (0..3).rev().find(|&i| order[i] < order[i + 1]) else {
                break;
            };
            let j = (i + 1..4).rev().find(|&j| order[j] > order[i]).unwrap();
            order.swap(i, j);
            order[i + 1..].reverse();
        }
        check(perms == 24, || format!("{perms} permutations"))?;
        Ok(format!(
            "{combos} random grids bit-exact, all {perms} orders of a 2x2 grid identical"
        ))
    });
}

#[test]
fn criterion_2_auf_loss() {
    criterion(2, "AUF loss", Duration::from_secs(60), || {
        let cfg = LossConfig::default();
        let batch = |p: &[f64], g: &[bool]| ProbTargetBatch::new(p.to_vec(), g.to_vec()).unwrap();

        let perfect = auf_loss(
            &batch(&[1.0, 0.0, 0.0, 1.0], &[true, false, false, true]),
            &cfg,
        );
        check(perfect <= 1e-6, || {
            format!("perfect prediction loss {perfect}")
        })?;

        let cases = [
            (
                "rare p=0.5",
                modified_asymmetric_focal(&batch(&[0.5], &[true]), 0.6, 0.1),
                0.4158883083359672,
            ),
            (
                "common p=0.5",
                modified_asymmetric_focal(&batch(&[0.5], &[false]), 0.6, 0.1),
                0.2586916749812597,
            ),
            (
                "two-pixel",
                auf_loss(&batch(&[0.8, 0.3], &[true, false]), &cfg),
                0.33389947493727956,
            ),
        ];
        for (name, got, want) in cases {
            check((got - want).abs() <= 1e-6, || {
                format!("{name}: {got} vs oracle {want}")
            })?;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let p: Vec<f64> = (0..16).map(|_| rng.random_range(0.02..0.98)).collect();
            let mut g: Vec<bool> = (0..16).map(|_| rng.random_bool(0.25)).collect();
            g[rng.random_range(0..16)] = true;
            let (_, grad) = auf_loss_with_grad(&batch(&p, &g), &cfg);
            for i in 0..16 {
                let h = 1e-6;
                let (mut up, mut dn) = (p.clone(), p.clone());
                up[i] += h;
                dn[i] -= h;
                let fd =
                    (auf_loss(&batch(&up, &g), &cfg) - auf_loss(&batch(&dn, &g), &cfg)) / (2.0 * h);
                worst = worst.max((grad[i] - fd).abs() / fd.abs().max(1e-8));
            }
        }
        check(worst < 1e-3, || {
            format!("worst gradient relative error {worst:.2e}")
        })?;
        Ok(format!(
            "oracles within 1e-6, worst gradient relative error {worst:.1e} on 20 batches of 4x4"
        ))
    });
}

#[test]
fn criterion_3_parameter_accounting() {
    criterion(3, "parameter accounting", Duration::from_secs(30), || {
        let mut lines = Vec::new();
        for family in EncoderFamily::ALL {
            let count = |size, arch| {
                let cfg = ModelConfig::new(family, size, arch, 12, 128);
                MagnifierModel::from_config(&cfg, 0)
                    .unwrap()
                    .parameter_count()
                    .encoders()
            };
            let small = count(EncoderSize::Small, Architecture::Single);
            let large = count(EncoderSize::Large, Architecture::Single);
            let mag = count(EncoderSize::Small, Architecture::Magnifier);
            check(mag == 2 * small, || {
                format!("{family:?}: magnifier {mag} != 2 x {small}")
            })?;
            check(mag < large, || {
                format!("{family:?}: magnifier {mag} >= large {large}")
            })?;
            lines.push(format!("{family:?} {small}/{mag}/{large}"));
        }
        Ok(format!(
            "encoder params small/magnifier/large: {}",
            lines.join(", ")
        ))
    });
}

#[test]
fn criterion_4_learning_check() {
    criterion(
        4,
        "desk-scale learning",
        Duration::from_secs(15 * 60),
        || {
            let data = synthesize_dataset(&SynthSpec::default(), 7).map_err(|e| e.to_string())?;
            check(
                data.len() == 64 && data.tile == 128 && data.channels() == 12,
                || "wrong dataset shape".into(),
            )?;
            let round = data.folds(5, 0, FoldStrategy::Random).unwrap().round(0);
            let run = |arch| {
                let model =
                    ModelConfig::new(EncoderFamily::CompactCnn, EncoderSize::Small, arch, 12, 128);
                let cfg = TrainConfig::new(model);
                let out = train(&cfg, &data, &round.train, &round.validation).unwrap();
                let test = out
                    .checkpoint
                    .evaluate(&data, &round.test, cfg.batch_size)
                    .unwrap();
                (test.iou(), out.log.best_epoch, cfg.epochs)
            };
            let (mag, best, epochs) = run(Architecture::Magnifier);
            let (single, _, _) = run(Architecture::Single);
            check(epochs <= 200, || format!("{epochs} epochs"))?;
            check(mag >= 0.85, || {
                format!("magnifier test IoU {mag:.4} < 0.85 (single {single:.4})")
            })?;
            Ok(format!(
            "magnifier test IoU {mag:.4} (best epoch {best} of {epochs}); single small, same budget: {single:.4}"
        ))
        },
    );
}

#[test]
fn criterion_5_otsu_and_index_baseline() {
    criterion(
        5,
        "Otsu and index segmentation",
        Duration::from_secs(60),
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for n in 0..500 {
                let (h, w) = (rng.random_range(2..40), rng.random_range(2..40));
                let modes = rng.random_range(1..4);
                let centers: Vec<f32> = (0..modes).map(|_| rng.random_range(-1.0..1.0)).collect();
                let raster = Array2::from_shape_fn((h, w), |_| {
                    centers[rng.random_range(0..modes)] + rng.random_range(-0.3..0.3)
                });
                let got = otsu_split(raster.view(), OTSU_BINS).unwrap().bin;
                let want = common::otsu_brute_force(raster.view(), OTSU_BINS);
                check(got == want, || {
                    format!("raster {n}: bin {got} vs brute force {want}")
                })?;
            }

            let data = synthesize_dataset(
                &SynthSpec {
                    n_samples: 16,
                    ..SynthSpec::high_separability()
                },
                5,
            )
            .unwrap();
            let s2 = SensorProfile::Sentinel2.band_map();
            let mut pooled = ConfusionCounts::default();
            let mut worst = 1.0f64;
            for s in &data.samples {
                let mask = segment_by_index(
                    s.image.view(),
                    SpectralIndex::Nbr,
                    &s2,
                    SpectralIndex::Nbr.burned_polarity(),
                )
                .unwrap();
                let c = confusion_counts(mask.view(), s.mask.view()).unwrap();
                worst = worst.min(c.iou());
                pooled += c;
            }
            check(pooled.iou() >= 0.95, || {
                format!("NBR+Otsu IoU {:.4}", pooled.iou())
            })?;
            Ok(format!(
                "500 rasters match brute force; NBR+Otsu IoU {:.4} pooled, {worst:.4} worst scene",
                pooled.iou()
            ))
        },
    );
}

#[test]
fn criterion_6_metrics_oracle() {
    criterion(6, "metrics and mean rank", Duration::from_secs(10), || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in 0..1000 {
            let (h, w) = (rng.random_range(1..33), rng.random_range(1..33));
            let q = rng.random_range(0.0..1.0);
            let pred = Array2::from_shape_fn((h, w), |_| u8::from(rng.random_bool(q)));
            let truth = Array2::from_shape_fn((h, w), |_| u8::from(rng.random_bool(q)));
            let (tp, fp, fn_, tn) = common::brute_counts(&pred, &truth);
            let c = confusion_counts(pred.view(), truth.view()).unwrap();
            check(c == ConfusionCounts { tp, fp, fn_, tn }, || {
                format!("pair {n}: counts differ")
            })?;
            if tp + fp + fn_ > 0 {
                check(
                    c.f1() == 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64,
                    || format!("pair {n}: F1"),
                )?;
                check(c.iou() == tp as f64 / (tp + fp + fn_) as f64, || {
                    format!("pair {n}: IoU")
                })?;
            }
            check(c.iou() <= c.f1(), || format!("pair {n}: IoU > F1"))?;
        }
        let mr = mean_rank_by_name(&common::compact_group(), TieMethod::default());
        for (name, want) in [("small", 2.7), ("magnifier", 1.0), ("large", 2.3)] {
            check((mr[name] - want).abs() <= 0.05, || {
                format!("MR {name} {:.3} vs {want}", mr[name])
            })?;
        }
        Ok(format!(
            "1000 mask pairs exact; MR small {:.2}, magnifier {:.2}, large {:.2}",
            mr["small"], mr["magnifier"], mr["large"]
        ))
    });
}

#[test]
fn criterion_7_cross_validation_audit() {
    criterion(
        7,
        "cross-validation audit",
        Duration::from_secs(5 * 60),
        || {
            let data = synthesize_dataset(
                &SynthSpec {
                    n_samples: 10,
                    tile: 64,
                    ..SynthSpec::default()
                },
                70,
            )
            .unwrap();
            let model = ModelConfig::new(
                EncoderFamily::CompactCnn,
                EncoderSize::Small,
                Architecture::Magnifier,
                12,
                64,
            )
            .with_patch(32, 32);
            let cfg = TrainConfig::new(model).with_epochs(2);
            let opts = CvOptions {
                k: 5,
                ..CvOptions::default()
            };
            let record = cross_validate(&cfg, &data, &opts).map_err(|e| e.to_string())?;

            let mut tested = vec![0; data.len()];
            for r in &record.rounds {
                for &i in &r.round.test {
                    tested[i] += 1;
                }
                let stats = ChannelStats::compute(
                    r.round.train.iter().map(|&i| data.samples[i].image.view()),
                )
                .unwrap();
                check(stats == r.stats, || {
                    format!(
                        "round {}: normalization used non-training data",
                        r.round.test_fold
                    )
                })?;
                let overlap = r
                    .round
                    .train
                    .iter()
                    .any(|i| r.round.test.contains(i) || r.round.validation.contains(i));
                check(!overlap, || {
                    format!(
                        "round {}: training overlaps held-out folds",
                        r.round.test_fold
                    )
                })?;
            }
            check(tested.iter().all(|&t| t == 1), || {
                format!("test counts {tested:?}")
            })?;

            let a = data.folds(5, opts.fold_seed, opts.strategy).unwrap();
            let b = data.folds(5, opts.fold_seed, opts.strategy).unwrap();
            check(
                a.assignment == b.assignment && a.assignment == record.folds.assignment,
                || "fold assignment not reproducible".into(),
            )?;
            Ok(format!(
            "10 samples each tested once over {} rounds, stats recomputed from training folds match, folds reproducible",
            record.rounds.len()
        ))
        },
    );
}

#[test]
fn criterion_8_transfer() {
    criterion(8, "transfer harness", Duration::from_secs(5 * 60), || {
        let spec = SynthSpec {
            n_samples: 32,
            tile: 64,
            ..SynthSpec::default()
        };
        let source = synthesize_dataset(&spec, 80).unwrap();
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
        let split = source.folds(5, 0, FoldStrategy::Random).unwrap();
        let round = split.round(0);
        let ckpt = train(&cfg, &source, &round.train, &round.validation)
            .map_err(|e| e.to_string())?
            .checkpoint;
        let in_domain = ckpt
            .evaluate(&source, &round.test, cfg.batch_size)
            .unwrap()
            .iou();

        let held_out = SynthSpec {
            n_samples: 12,
            ..spec.clone()
        };
        let control = synthesize_dataset(&held_out, 81).unwrap();
        let shifted =
            synthesize_dataset(&held_out.clone().with_band_shift(0.25).unwrap(), 81).unwrap();
        let all: Vec<usize> = (0..12).collect();
        let in_dist = transfer_evaluate(&ckpt, &control, &all, 0)
            .unwrap()
            .iou
            .mean;
        let moved = transfer_evaluate(&ckpt, &shifted, &all, 0)
            .unwrap()
            .iou
            .mean;
        check(moved < in_dist, || {
            format!("shifted IoU {moved:.4} not below control {in_dist:.4}")
        })?;
        check((in_dist - in_domain).abs() <= 0.05, || {
            format!("held-out control {in_dist:.4} far from in-domain test {in_domain:.4}")
        })?;

        let landsat = synthesize_dataset(
            &SynthSpec {
                n_samples: 2,
                channels: 8,
                ..spec
            },
            82,
        )
        .unwrap();
        let mismatch = transfer_evaluate(&ckpt, &landsat, &[0, 1], 0);
        check(
            matches!(
                mismatch,
                Err(Error::IncompatibleProfile {
                    expected: 12,
                    found: 8
                })
            ),
            || format!("12 -> 8 channel transfer gave {mismatch:?}"),
        )?;
        Ok(format!(
            "IoU {in_domain:.4} on the test fold, {in_dist:.4} on a fresh same-distribution set, \
             {moved:.4} band-shifted; 12->8 channels rejected"
        ))
    });
}
