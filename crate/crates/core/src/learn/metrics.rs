//! Evaluation metrics: mean cross-entropy, macro one-vs-rest ROC AUC,
//! macro F1 and accuracy.

use super::{argmax, check_data, mean_loss, LearnError, ModelParams, Result};
use crate::dataset::LabeledDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub auc: f64,
    pub fscore: f64,
    pub accuracy: f64,
}

/// ROC AUC by the rank-sum statistic, tied scores sharing their mid-rank.
/// `None` when one of the two classes is absent.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Uniform mean of per-class one-vs-rest AUCs over classes that have both
/// positives and negatives; 0.5 if no class qualifies.
///
/// `probs` is row-major `labels.len() x n_classes`.
pub fn macro_auc(probs: &[f64], labels: &[usize], n_classes: usize) -> f64 {
    let aucs: Vec<f64> = (0..n_classes)
        .filter_map(|c| {
            let scores: Vec<f64> = probs.iter().skip(c).step_by(n_classes).copied().collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            binary_auc(&scores, &positive)
        })
        .collect();
    if aucs.is_empty() {
        0.5
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    }
}

/// Uniform mean over all classes of `2tp / (2tp + fp + fn)`, a class with
/// no predictions and no positives scoring 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], n_classes: usize) -> f64 {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p == y {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let total: f64 = (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    total / n_classes as f64
}

pub fn evaluate(model: &ModelParams, testset: &LabeledDataset) -> Result<Metrics> {
    check_data(model, testset)?;
    if testset.is_empty() {
        return Err(LearnError::EmptyData);
    }
    let n_classes = model.arch.classes;
    let mut probs = Vec::with_capacity(testset.len() * n_classes);
    let mut predictions = Vec::with_capacity(testset.len());
    for i in 0..testset.len() {
        let p = model.forward(testset.row(i))?;
        predictions.push(argmax(&p));
        probs.extend(p);
    }
    let all: Vec<usize> = (0..testset.len()).collect();
    let correct = predictions
        .iter()
        .zip(testset.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(Metrics {
        loss: mean_loss(model, testset, &all)?,
        auc: macro_auc(&probs, testset.labels(), n_classes),
        fscore: macro_f1(&predictions, testset.labels(), n_classes),
        accuracy: correct as f64 / testset.len() as f64,
    })
}
