//! Evaluation metrics: rank-based ROC-AUC, average precision over tasks,
//! MAE and accuracy.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_task: Vec<Option<f64>>,
    pub n_samples: usize,
}

/// 1-based ranks of `scores`, ties sharing their average rank.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut ranks = alloc::vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve via the Mann–Whitney statistic.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(contract("roc_auc: scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("roc_auc: NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC-AUC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision of one task: mean precision at each positive of the
/// score-sorted list. `None` when the task has no positives.
pub fn average_precision_single(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(total / pos as f64)
}

/// Per-task AP over `n × tasks` row-major scores, labels and mask, plus the
/// mean over tasks that have at least one observed positive.
pub fn average_precision(
    scores: &[f64],
    labels: &[f64],
    mask: &[f64],
    tasks: usize,
) -> Result<(Vec<Option<f64>>, f64)> {
    if tasks == 0 || scores.len() != labels.len() || scores.len() != mask.len() {
        return Err(contract("average_precision: inconsistent inputs"));
    }
    if scores.len() % tasks != 0 {
        return Err(contract("average_precision: length not a multiple of tasks"));
    }
    let n = scores.len() / tasks;
    let per_task: Vec<Option<f64>> = (0..tasks)
        .map(|t| {
            let (s, l): (Vec<f64>, Vec<bool>) = (0..n)
                .map(|i| i * tasks + t)
                .filter(|&j| mask[j] != 0.0)
                .map(|j| (scores[j], labels[j] == 1.0))
                .unzip();
            average_precision_single(&s, &l)
        })
        .collect();
    let valid: Vec<f64> = per_task.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::UndefinedMetric("no task has a positive label".into()));
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    Ok((per_task, mean))
}

/// Mean absolute error.
pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(contract("mae: lengths differ"));
    }
    if preds.is_empty() {
        return Err(contract("mae of no samples"));
    }
    let s: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| libm::fabs(p - t))
        .sum();
    Ok(s / preds.len() as f64)
}

/// Fraction of logits on the same side of 0 as their 0/1 label.
pub fn accuracy(logits: &[f64], labels: &[bool]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(contract("accuracy: empty or mismatched inputs"));
    }
    let correct = logits
        .iter()
        .zip(labels)
        .filter(|(&x, &y)| (x > 0.0) == y)
        .count();
    Ok(correct as f64 / logits.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.2, 0.8], &[false, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.8, 0.2], &[false, true]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.3; 4], &[false, true, true, false]).unwrap(), 0.5);
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ap_examples() {
        let l = [true, false, false, false];
        assert_eq!(average_precision_single(&[0.9, 0.1, 0.2, 0.3], &l), Some(1.0));
        assert_eq!(average_precision_single(&[0.0, 0.1, 0.2, 0.3], &l), Some(0.25));
        let ap = average_precision_single(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ap_skips_tasks_without_positives() {
        // two tasks; the second has no observed positive
        let scores = [0.9, 0.5, 0.1, 0.4];
        let labels = [1.0, 0.0, 0.0, 1.0];
        let mask = [1.0, 1.0, 1.0, 0.0];
        let (per, mean) = average_precision(&scores, &labels, &mask, 2).unwrap();
        assert_eq!(per, [Some(1.0), None]);
        assert_eq!(mean, 1.0);
        assert!(average_precision(&scores, &[0.0; 4], &mask, 2).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_counts_sides() {
        assert_eq!(accuracy(&[1.0, -1.0, 2.0], &[true, false, false]).unwrap(), 2.0 / 3.0);
    }
}
