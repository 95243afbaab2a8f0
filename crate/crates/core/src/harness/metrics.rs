//! Accuracy, Mann-Whitney AUC and F1 from class scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    /// `None` when the split holds a single class.
    pub auc: Option<f64>,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub n_samples: usize,
}

/// Probability that a random positive outscores a random negative, ties ½.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::shape("auc", &[scores.len()], &[positive.len()]));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Counted in half-units so the result is one exact division.
    let mut halves: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        halves += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(halves as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Metrics from per-sample class probabilities (`probs[i].len() == classes`).
/// Binary AUC/F1 refer to class 1; with more classes both are one-vs-rest
/// macro averages.
pub fn compute_metrics(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<MetricsReport> {
    if probs.is_empty() {
        return Err(Error::Empty("metrics over zero samples".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::shape("metrics", &[probs.len()], &[labels.len()]));
    }
    for (p, &l) in probs.iter().zip(labels) {
        if p.len() != classes {
            return Err(Error::shape("metrics", &[p.len()], &[classes]));
        }
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (p, &l) in probs.iter().zip(labels) {
        confusion[l][argmax(p)] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class: Vec<ClassMetrics> = (0..classes)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted: usize = (0..classes).map(|t| confusion[t][c]).sum();
            let support: usize = confusion[c].iter().sum();
            let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
            let (precision, recall) = (ratio(tp, predicted), ratio(tp, support));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let one_vs_rest = |c: usize| {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        auc(&scores, &pos)
    };
    let (auc, f1) = if classes == 2 {
        (one_vs_rest(1).ok(), per_class[1].f1)
    } else {
        let aucs: Option<Vec<f64>> = (0..classes).map(|c| one_vs_rest(c).ok()).collect();
        (
            aucs.map(|a| a.iter().sum::<f64>() / classes as f64),
            per_class.iter().map(|m| m.f1).sum::<f64>() / classes as f64,
        )
    };
    Ok(MetricsReport {
        acc: correct as f64 / labels.len() as f64,
        auc,
        f1,
        per_class,
        confusion,
        n_samples: labels.len(),
    })
}

impl MetricsReport {
    /// The AUC or [`Error::AucUndefined`].
    pub fn auc(&self) -> Result<f64> {
        self.auc.ok_or(Error::AucUndefined)
    }
}
