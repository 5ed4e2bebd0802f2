//! Multi-label evaluation metrics and validation threshold selection.
//!
//! Conventions for empty denominators:
//!
//! * ebF1 of a row where both `y` and `ŷ` are empty is 1.
//! * miF1 with no positives anywhere (in `Y` or `Ŷ`) is 1.
//! * maF1 averages over labels that occur in `Y` or `Ŷ`; it is 1 when no
//!   label occurs at all.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{LampError, Result};

/// Row-major `rows × cols` 0/1 matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl LabelMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LampError::dim("label_matrix", format!("{} entries for {}×{}", data.len(), rows, cols)));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(LampError::Data("label matrix entries must be 0 or 1".into()));
        }
        Ok(LabelMatrix { rows, cols, data })
    }

    pub fn from_sets<S: AsRef<[u32]>>(sets: &[S], cols: usize) -> Result<Self> {
        let mut data = vec![0u8; sets.len() * cols];
        for (r, set) in sets.iter().enumerate() {
            for &l in set.as_ref() {
                if l as usize >= cols {
                    return Err(LampError::Data(format!("label id {} out of range for {} labels", l, cols)));
                }
                data[r * cols + l as usize] = 1;
            }
        }
        Ok(LabelMatrix { rows: sets.len(), cols, data })
    }

    /// `ŷ ≥ τ` elementwise.
    pub fn threshold(probs: &[f64], rows: usize, cols: usize, tau: f64) -> Result<Self> {
        if probs.len() != rows * cols {
            return Err(LampError::dim("threshold", format!("{} probabilities for {}×{}", probs.len(), rows, cols)));
        }
        Ok(LabelMatrix { rows, cols, data: probs.iter().map(|&p| u8::from(p >= tau)).collect() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c] == 1
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

fn check_pair(y: &LabelMatrix, yhat: &LabelMatrix) -> Result<()> {
    if y.rows != yhat.rows || y.cols != yhat.cols {
        return Err(LampError::dim(
            "metric",
            format!("Y is {}×{} but Ŷ is {}×{}", y.rows, y.cols, yhat.rows, yhat.cols),
        ));
    }
    if y.rows == 0 || y.cols == 0 {
        return Err(LampError::EmptyInput("metric over an empty label matrix".into()));
    }
    Ok(())
}

/// Fraction of rows predicted exactly.
pub fn subset_accuracy(y: &LabelMatrix, yhat: &LabelMatrix) -> Result<f64> {
    check_pair(y, yhat)?;
    let hits = (0..y.rows).filter(|&r| y.row(r) == yhat.row(r)).count();
    Ok(hits as f64 / y.rows as f64)
}

/// Fraction of individual label decisions that are correct.
pub fn hamming_accuracy(y: &LabelMatrix, yhat: &LabelMatrix) -> Result<f64> {
    check_pair(y, yhat)?;
    let hits = y.data.iter().zip(&yhat.data).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y.data.len() as f64)
}

/// Mean over rows of `2|y ∩ ŷ| / (|y| + |ŷ|)`.
pub fn example_f1(y: &LabelMatrix, yhat: &LabelMatrix) -> Result<f64> {
    check_pair(y, yhat)?;
    let mut total = 0.0;
    for r in 0..y.rows {
        let (mut inter, mut size) = (0usize, 0usize);
        for (&a, &b) in y.row(r).iter().zip(yhat.row(r)) {
            inter += usize::from(a & b);
            size += usize::from(a) + usize::from(b);
        }
        total += if size == 0 { 1.0 } else { 2.0 * inter as f64 / size as f64 };
    }
    Ok(total / y.rows as f64)
}

fn label_counts(y: &LabelMatrix, yhat: &LabelMatrix) -> Vec<(usize, usize, usize)> {
    let mut counts = vec![(0, 0, 0); y.cols];
    for (i, (&a, &b)) in y.data.iter().zip(&yhat.data).enumerate() {
        let c = &mut counts[i % y.cols];
        match (a, b) {
            (1, 1) => c.0 += 1,
            (0, 1) => c.1 += 1,
            (1, 0) => c.2 += 1,
            _ => {}
        }
    }
    counts
}

/// F1 of the pooled true/false positive and false negative counts.
pub fn micro_f1(y: &LabelMatrix, yhat: &LabelMatrix) -> Result<f64> {
    check_pair(y, yhat)?;
    let (tp, fp, fn_) = label_counts(y, yhat)
        .into_iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 })
}

/// Unweighted mean of per-label F1 over labels present in `Y` or `Ŷ`.
pub fn macro_f1(y: &LabelMatrix, yhat: &LabelMatrix) -> Result<f64> {
    check_pair(y, yhat)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (tp, fp, fn_) in label_counts(y, yhat) {
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            sum += 2.0 * tp as f64 / denom as f64;
            n += 1;
        }
    }
    Ok(if n == 0 { 1.0 } else { sum / n as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Acc,
    Ha,
    EbF1,
    MiF1,
    MaF1,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Acc, Metric::Ha, Metric::EbF1, Metric::MiF1, Metric::MaF1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Acc => "acc",
            Metric::Ha => "ha",
            Metric::EbF1 => "ebf1",
            Metric::MiF1 => "mif1",
            Metric::MaF1 => "maf1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn compute(self, y: &LabelMatrix, yhat: &LabelMatrix) -> Result<f64> {
        match self {
            Metric::Acc => subset_accuracy(y, yhat),
            Metric::Ha => hamming_accuracy(y, yhat),
            Metric::EbF1 => example_f1(y, yhat),
            Metric::MiF1 => micro_f1(y, yhat),
            Metric::MaF1 => macro_f1(y, yhat),
        }
    }
}

/// The candidate thresholds `0.05, 0.10, …, 0.90`.
pub fn threshold_grid() -> Vec<f64> {
    (1..=18).map(|k| k as f64 / 20.0).collect()
}

/// Best global threshold for `metric` on a validation pair, with its score.
/// Ties go to the smaller threshold.
pub fn select_threshold(y: &LabelMatrix, probs: &[f64], metric: Metric) -> Result<(f64, f64)> {
    if y.rows == 0 {
        return Err(LampError::EmptyInput("threshold selection needs validation samples".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for tau in threshold_grid() {
        let yhat = LabelMatrix::threshold(probs, y.rows, y.cols, tau)?;
        let score = metric.compute(y, &yhat)?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((tau, score));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// All five metrics with the threshold each was computed at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub values: [f64; 5],
    pub thresholds: [f64; 5],
}

impl MetricsReport {
    pub fn get(&self, m: Metric) -> f64 {
        self.values[m.index()]
    }

    pub fn threshold(&self, m: Metric) -> f64 {
        self.thresholds[m.index()]
    }

    /// Scores `probs` against `y`, thresholding per metric.
    pub fn evaluate(y: &LabelMatrix, probs: &[f64], thresholds: [f64; 5]) -> Result<Self> {
        let mut values = [0.0; 5];
        for m in Metric::ALL {
            let yhat = LabelMatrix::threshold(probs, y.rows, y.cols, thresholds[m.index()])?;
            values[m.index()] = m.compute(y, &yhat)?;
        }
        Ok(MetricsReport { values, thresholds })
    }

    /// Per-metric thresholds chosen on a validation pair.
    pub fn select_thresholds(y_val: &LabelMatrix, probs_val: &[f64]) -> Result<[f64; 5]> {
        let mut t = [0.5; 5];
        for m in Metric::ALL {
            t[m.index()] = select_threshold(y_val, probs_val, m)?.0;
        }
        Ok(t)
    }
}
