use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation of a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub auc: f64,
    pub aps: f64,
    pub recall: f64,
    pub precision: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["acc", "auc", "aps", "recall", "precision"];

    pub fn values(&self) -> [f64; 5] {
        [self.acc, self.auc, self.aps, self.recall, self.precision]
    }

    pub fn from_values(v: [f64; 5]) -> Self {
        Self {
            acc: v[0],
            auc: v[1],
            aps: v[2],
            recall: v[3],
            precision: v[4],
        }
    }
}

/// The threshold-dependent part of [`Metrics`]; defined for any labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub acc: f64,
    pub recall: f64,
    pub precision: f64,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::SizeMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Data("no scores".into()));
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    Ok(())
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    (pos, labels.len() - pos)
}

/// Accuracy, recall and precision with `score >= threshold` predicted
/// positive. Recall and precision are 0 when their denominator is empty.
pub fn threshold_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ThresholdMetrics> {
    check(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(ThresholdMetrics {
        acc: ratio(tp + tn, scores.len()),
        recall: ratio(tp, tp + fneg),
        precision: ratio(tp, tp + fp),
    })
}

/// Mann-Whitney AUC with ties counted one half, via average ranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined("AUC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives; doubled ranks stay integral.
    let mut rank2_sum = 0u64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 average to (i + j + 2) / 2.
        let doubled = (i + j + 2) as u64;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank2_sum += doubled;
            }
        }
        i = j + 1;
    }
    // 2U = 2*R - P(P+1). Counting wins plus half-ties gives the same U.
    let u2 = rank2_sum - (pos * (pos + 1)) as u64;
    Ok((u2 as f64 / 2.0) / (pos as f64 * neg as f64))
}

/// Non-interpolated average precision: sum over distinct thresholds of
/// `(R_k - R_{k-1}) * P_k`.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined("APS needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let t = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == t {
            if labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

pub fn compute_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Metrics> {
    let t = threshold_metrics(scores, labels, threshold)?;
    Ok(Metrics {
        acc: t.acc,
        auc: auc(scores, labels)?,
        aps: average_precision(scores, labels)?,
        recall: t.recall,
        precision: t.precision,
    })
}
