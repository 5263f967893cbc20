//! Accuracy, harmonic mean and entropy-based cluster quality.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rank of column `label` in `row`: the number of entries that beat it, where
/// equal values at a lower index count as beating it.
fn rank_of(row: &[f64], label: usize) -> usize {
    let y = row[label];
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > y || (v == y && j < label))
        .count()
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Percentage of rows whose label is among the `k` largest logits.
pub fn top_k_accuracy(logits: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::data(format!("{} logit rows but {} labels", logits.len(), labels.len())));
    }
    if logits.is_empty() {
        return Err(Error::data("no rows to score"));
    }
    let cols = logits[0].len();
    if logits.iter().any(|r| r.len() != cols) {
        return Err(Error::data("ragged logit rows"));
    }
    if k == 0 || k > cols {
        return Err(Error::data(format!("k={k} outside 1..={cols}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
        return Err(Error::data(format!("label {bad} out of range for {cols} classes")));
    }
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(row, &y)| rank_of(row, y) < k)
        .count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// `2ab/(a+b)`; defined as 0 when both are 0.
pub fn harmonic_mean(base_acc: f64, novel_acc: f64) -> f64 {
    if base_acc + novel_acc == 0.0 {
        0.0
    } else {
        2.0 * base_acc * novel_acc / (base_acc + novel_acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterScores {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Homogeneity, completeness and V-measure of a predicted labeling, in nats.
pub fn cluster_quality(pred: &[usize], truth: &[usize]) -> Result<ClusterScores> {
    if pred.len() != truth.len() {
        return Err(Error::data(format!("{} predictions but {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::data("no labels to cluster"));
    }
    let n = pred.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut by_true: HashMap<usize, usize> = HashMap::new();
    let mut by_pred: HashMap<usize, usize> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *joint.entry((t, p)).or_default() += 1;
        *by_true.entry(t).or_default() += 1;
        *by_pred.entry(p).or_default() += 1;
    }
    let h_true = entropy(by_true.values().copied(), n);
    let h_pred = entropy(by_pred.values().copied(), n);
    let h_joint = entropy(joint.values().copied(), n);
    // H(T|P) = H(T,P) - H(P), H(P|T) = H(T,P) - H(T)
    let homogeneity = if h_true == 0.0 { 1.0 } else { 1.0 - (h_joint - h_pred) / h_true };
    let completeness = if h_pred == 0.0 { 1.0 } else { 1.0 - (h_joint - h_true) / h_pred };
    let v_measure = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    Ok(ClusterScores {
        homogeneity,
        completeness,
        v_measure,
    })
}
