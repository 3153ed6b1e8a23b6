#![allow(dead_code)]

use magnifier::metrics::ScoreTable;
use ndarray::{Array2, ArrayView2};

/// Split bin maximizing between-class variance, found by evaluating every
/// candidate from scratch. Bins use the same floor-and-clamp placement as the
/// library; the first maximum wins.
pub fn otsu_brute_force(raster: ArrayView2<'_, f32>, n_bins: usize) -> usize {
    let vals: Vec<f64> = raster.iter().map(|&v| v as f64).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let bins: Vec<usize> = vals
        .iter()
        .map(|v| (((v - lo) / width).floor().max(0.0) as usize).min(n_bins - 1))
        .collect();
    let center = |k: usize| lo + (k as f64 + 0.5) * width;
    let mut best = (f64::NEG_INFINITY, 1);
    for split in 1..n_bins {
        let lower: Vec<f64> = bins
            .iter()
            .filter(|&&b| b < split)
            .map(|&b| center(b))
            .collect();
        let upper: Vec<f64> = bins
            .iter()
            .filter(|&&b| b >= split)
            .map(|&b| center(b))
            .collect();
        if lower.is_empty() || upper.is_empty() {
            continue;
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let score = lower.len() as f64 * upper.len() as f64 * (mean(&lower) - mean(&upper)).powi(2);
        if score > best.0 * (1.0 + 1e-12) {
            best = (score, split);
        }
    }
    best.1
}

/// `(tp, fp, fn, tn)` by walking every pixel.
pub fn brute_counts(pred: &Array2<u8>, truth: &Array2<u8>) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for (p, t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => c.0 += 1,
            (1, 0) => c.1 += 1,
            (0, 1) => c.2 += 1,
            _ => c.3 += 1,
        }
    }
    c
}

pub const COLUMNS: [&str; 6] = [
    "cabuar/F1",
    "cabuar/IoU",
    "europe/F1",
    "europe/IoU",
    "indonesia/F1",
    "indonesia/IoU",
];

/// Published compact-CNN group: small single, Magnifier, large single.
pub fn compact_group() -> ScoreTable {
    table(&[
        ("small", [64.8, 48.4, 72.6, 59.1, 73.3, 58.1]),
        ("magnifier", [69.7, 54.1, 79.7, 67.5, 80.2, 69.6]),
        ("large", [60.5, 44.4, 74.0, 60.3, 75.5, 60.9]),
    ])
}

/// Published residual-CNN group, with a tie in one column.
pub fn residual_group() -> ScoreTable {
    table(&[
        ("rn18", [73.8, 59.4, 83.6, 72.7, 83.7, 72.0]),
        ("magnifier", [77.8, 64.0, 83.7, 72.7, 84.7, 73.5]),
        ("rn101", [76.0, 62.3, 81.9, 70.3, 82.4, 70.2]),
    ])
}

fn table(rows: &[(&str, [f64; 6])]) -> ScoreTable {
    ScoreTable::new(
        rows.iter().map(|r| r.0.to_string()).collect(),
        COLUMNS.iter().map(|c| c.to_string()).collect(),
        rows.iter().map(|r| r.1.to_vec()).collect(),
    )
    .unwrap()
}
