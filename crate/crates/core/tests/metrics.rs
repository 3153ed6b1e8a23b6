mod common;

use magnifier::metrics::{
    aggregate_folds, confusion_counts, f1_score, iou_score, mean_rank, mean_rank_by_name,
    rank_descending, ConfusionCounts, FoldMetrics, MeanStd, ScoreTable, TieMethod,
};
use ndarray::{arr2, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn two_by_two_enumeration() {
    let pred = arr2(&[[1u8, 1], [0, 0]]);
    let truth = arr2(&[[1u8, 0], [1, 0]]);
    let c = confusion_counts(pred.view(), truth.view()).unwrap();
    assert_eq!(
        c,
        ConfusionCounts {
            tp: 1,
            fp: 1,
            fn_: 1,
            tn: 1
        }
    );
}

#[test]
fn closed_form_scores() {
    let c = ConfusionCounts {
        tp: 2,
        fp: 1,
        fn_: 1,
        tn: 0,
    };
    assert!((c.f1() - 2.0 / 3.0).abs() < 1e-12);
    assert!((c.iou() - 0.5).abs() < 1e-12);
}

#[test]
fn fold_mean_and_std() {
    let m = MeanStd::of(&[0.6, 0.8]);
    assert!((m.mean - 0.7).abs() < 1e-12 && (m.std - 0.1).abs() < 1e-12);
    let folds: Vec<FoldMetrics> = [(3, 1, 1), (5, 0, 2), (1, 4, 0)]
        .iter()
        .enumerate()
        .map(|(i, &(tp, fp, fn_))| {
            FoldMetrics::from_counts(i, ConfusionCounts { tp, fp, fn_, tn: 9 })
        })
        .collect();
    let report = aggregate_folds(folds.clone());
    let hand = folds.iter().map(|f| f.iou).sum::<f64>() / 3.0;
    assert!((report.iou.mean - hand).abs() < 1e-12);
    assert!(report.to_text().contains("mean"));
}

#[test]
fn random_pairs_match_pixel_walk() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let (h, w) = (rng.random_range(1..17), rng.random_range(1..17));
        let density = rng.random_range(0.0..1.0);
        let pred = Array2::from_shape_fn((h, w), |_| u8::from(rng.random_bool(density)));
        let truth = Array2::from_shape_fn((h, w), |_| u8::from(rng.random_bool(density)));
        let (tp, fp, fn_, tn) = common::brute_counts(&pred, &truth);
        let c = confusion_counts(pred.view(), truth.view()).unwrap();
        assert_eq!(c, ConfusionCounts { tp, fp, fn_, tn });
        let f1 = f1_score(pred.view(), truth.view()).unwrap();
        let iou = iou_score(pred.view(), truth.view()).unwrap();
        if tp + fp + fn_ > 0 {
            assert_eq!(f1, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
            assert_eq!(iou, tp as f64 / (tp + fp + fn_) as f64);
        }
        assert!(iou <= f1);
    }
}

#[test]
fn mean_rank_of_published_groups() {
    let compact = mean_rank_by_name(&common::compact_group(), TieMethod::Average);
    assert!((compact["small"] - 2.7).abs() <= 0.05);
    assert!((compact["magnifier"] - 1.0).abs() <= 0.05);
    assert!((compact["large"] - 2.3).abs() <= 0.05);

    let avg = mean_rank(&common::residual_group(), TieMethod::Average);
    assert!((avg[1] - 1.0833).abs() < 1e-3);
    let min = mean_rank(&common::residual_group(), TieMethod::Min);
    for (got, want) in min.iter().zip([2.2, 1.0, 2.7]) {
        assert!((got - want).abs() <= 0.05, "{got} vs {want}");
    }
}

#[test]
fn ties_share_ranks() {
    assert_eq!(
        rank_descending(&[3.0, 5.0, 3.0, 1.0], TieMethod::Average),
        vec![2.5, 1.0, 2.5, 4.0]
    );
    assert_eq!(
        rank_descending(&[3.0, 5.0, 3.0, 1.0], TieMethod::Min),
        vec![2.0, 1.0, 2.0, 4.0]
    );
}

#[test]
fn score_table_csv() {
    let t = common::compact_group();
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    assert_eq!(ScoreTable::read_csv(buf.as_slice()).unwrap(), t);
    let gappy = "algorithm,column,score\na,x,1\nb,y,2\n";
    assert!(ScoreTable::read_csv(gappy.as_bytes()).is_err());
}

proptest! {
    #[test]
    fn iou_never_exceeds_f1(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000) {
        let c = ConfusionCounts { tp, fp, fn_, tn: 0 };
        prop_assert!(c.iou() <= c.f1() + 1e-15);
        prop_assert!((0.0..=1.0).contains(&c.iou()));
    }

    #[test]
    fn mean_ranks_average_to_the_middle(scores in prop::collection::vec(prop::collection::vec(0.0f64..100.0, 4), 2..6)) {
        let n = scores.len();
        let t = ScoreTable::new(
            (0..n).map(|i| format!("a{i}")).collect(),
            (0..4).map(|i| format!("c{i}")).collect(),
            scores,
        ).unwrap();
        let total: f64 = mean_rank(&t, TieMethod::Average).iter().sum();
        prop_assert!((total - n as f64 * (n as f64 + 1.0) / 2.0).abs() < 1e-9);
    }
}
