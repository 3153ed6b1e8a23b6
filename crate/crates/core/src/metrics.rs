//! Pixel-level scores, fold aggregation, ranking and cost estimation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::{Add, AddAssign};

use magnifier_nn::Graph;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{nhwc_to_nchw, MagnifierModel, ModelConfig};

/// Pixel counts with burned as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2TP / (2TP + FP + FN)`; 1 when nothing is burned in either mask.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }

    /// `TP / (TP + FP + FN)`; 1 when nothing is burned in either mask.
    pub fn iou(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

pub fn confusion_counts(
    pred: ArrayView2<'_, u8>,
    truth: ArrayView2<'_, u8>,
) -> Result<ConfusionCounts> {
    if pred.dim() != truth.dim() {
        return Err(Error::shape(
            "confusion_counts",
            truth.shape(),
            pred.shape(),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            (v, _) if v > 1 => return Err(Error::NonBinaryInput(v)),
            (_, v) => return Err(Error::NonBinaryInput(v)),
        }
    }
    Ok(c)
}

pub fn f1_score(pred: ArrayView2<'_, u8>, truth: ArrayView2<'_, u8>) -> Result<f64> {
    Ok(confusion_counts(pred, truth)?.f1())
}

pub fn iou_score(pred: ArrayView2<'_, u8>, truth: ArrayView2<'_, u8>) -> Result<f64> {
    Ok(confusion_counts(pred, truth)?.iou())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.mean * 100.0, self.std * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub f1: f64,
    pub iou: f64,
    pub counts: ConfusionCounts,
}

impl FoldMetrics {
    /// Scores from counts pooled over every pixel of the fold.
    pub fn from_counts(fold: usize, counts: ConfusionCounts) -> Self {
        Self {
            fold,
            f1: counts.f1(),
            iou: counts.iou(),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub folds: Vec<FoldMetrics>,
    pub f1: MeanStd,
    pub iou: MeanStd,
}

pub fn aggregate_folds(folds: Vec<FoldMetrics>) -> MetricReport {
    let f1: Vec<f64> = folds.iter().map(|f| f.f1).collect();
    let iou: Vec<f64> = folds.iter().map(|f| f.iou).collect();
    MetricReport {
        f1: MeanStd::of(&f1),
        iou: MeanStd::of(&iou),
        folds,
    }
}

impl MetricReport {
    /// One line per fold, then the aggregate, as percentages.
    pub fn to_text(&self) -> String {
        let mut s = String::from("fold\tF1\tIoU\n");
        for f in &self.folds {
            s += &format!("{}\t{:.1}\t{:.1}\n", f.fold, f.f1 * 100.0, f.iou * 100.0);
        }
        s += &format!("mean\t{}\t{}\n", self.f1, self.iou);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieMethod {
    /// Tied entries share the mean of the ranks they span.
    #[default]
    Average,
    /// Tied entries all take the best rank they span.
    Min,
}

/// Scores of several algorithms over (dataset, metric) columns, higher is
/// better everywhere.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub algorithms: Vec<String>,
    pub columns: Vec<String>,
    /// `scores[a][c]`
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    algorithm: String,
    column: String,
    score: f64,
}

impl ScoreTable {
    pub fn new(
        algorithms: Vec<String>,
        columns: Vec<String>,
        scores: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if scores.len() != algorithms.len() || scores.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::shape(
                "score table",
                &[algorithms.len(), columns.len()],
                &[scores.len(), scores.first().map_or(0, Vec::len)],
            ));
        }
        Ok(Self {
            algorithms,
            columns,
            scores,
        })
    }

    pub fn push(&mut self, algorithm: &str, column: &str, score: f64) {
        let a = index_or_insert(&mut self.algorithms, algorithm);
        let c = index_or_insert(&mut self.columns, column);
        self.scores.resize_with(self.algorithms.len(), Vec::new);
        for row in &mut self.scores {
            row.resize(self.columns.len(), f64::NAN);
        }
        self.scores[a][c] = score;
    }

    /// Long format: `algorithm,column,score`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut table = Self::default();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: ScoreRow = row?;
            table.push(&row.algorithm, &row.column, row.score);
        }
        if let Some((a, c)) = table.first_missing() {
            return Err(Error::BadManifest(format!(
                "score table has no entry for {} on {}",
                table.algorithms[a], table.columns[c]
            )));
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (a, name) in self.algorithms.iter().enumerate() {
            for (c, col) in self.columns.iter().enumerate() {
                w.serialize(ScoreRow {
                    algorithm: name.clone(),
                    column: col.clone(),
                    score: self.scores[a][c],
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn first_missing(&self) -> Option<(usize, usize)> {
        self.scores
            .iter()
            .enumerate()
            .find_map(|(a, row)| row.iter().position(|v| v.is_nan()).map(|c| (a, c)))
    }
}

fn index_or_insert(names: &mut Vec<String>, name: &str) -> usize {
    names.iter().position(|n| n == name).unwrap_or_else(|| {
        names.push(name.to_string());
        names.len() - 1
    })
}

/// Ranks of `values` where the largest gets rank 1.
pub fn rank_descending(values: &[f64], ties: TieMethod) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = match ties {
            TieMethod::Average => (i + j) as f64 / 2.0 + 1.0,
            TieMethod::Min => i as f64 + 1.0,
        };
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Mean over columns of each algorithm's rank within that column.
pub fn mean_rank(table: &ScoreTable, ties: TieMethod) -> Vec<f64> {
    let n = table.algorithms.len();
    let m = table.columns.len();
    let mut total = vec![0.0; n];
    for c in 0..m {
        let col: Vec<f64> = table.scores.iter().map(|r| r[c]).collect();
        for (t, r) in total.iter_mut().zip(rank_descending(&col, ties)) {
            *t += r;
        }
    }
    total.into_iter().map(|t| t / m as f64).collect()
}

/// Mean rank keyed by algorithm name.
pub fn mean_rank_by_name(table: &ScoreTable, ties: TieMethod) -> BTreeMap<String, f64> {
    table
        .algorithms
        .iter()
        .cloned()
        .zip(mean_rank(table, ties))
        .collect()
}

/// Multiply-accumulate cost of one inference pass, doubled, for a single
/// image. Fails for any layer without a cost model.
pub fn estimate_flops(config: &ModelConfig) -> Result<u64> {
    let model = MagnifierModel::from_config(config, 0)?;
    model_flops(&model)
}

pub fn model_flops(model: &MagnifierModel) -> Result<u64> {
    let c = model.config();
    let probe = ndarray::Array4::<f32>::zeros((1, c.image_h, c.image_w, c.encoder.in_channels));
    let g = Graph::inference();
    let x = g.constant(nhwc_to_nchw(probe.view()));
    model.logits_graph(&g, x)?;
    Ok(magnifier_nn::total_flops(&g.layer_trace())?)
}
