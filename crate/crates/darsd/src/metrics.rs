//! Classification metrics and the per-epoch metrics record.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unweighted mean of per-class F1 over all `n_classes`, with the 0/0 := 0
/// convention for classes absent from both predictions and truth.
pub fn macro_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "macro_f1: {} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&c| c >= n_classes) {
        return Err(Error::Contract(format!(
            "class {bad} out of range for {n_classes} classes"
        )));
    }
    let per = per_class_f1(pred, truth, n_classes);
    Ok(per.iter().sum::<f64>() / n_classes as f64)
}

/// Per-class F1 from the confusion matrix.
pub fn per_class_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> Vec<f64> {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fneg = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect()
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / pred.len() as f64
}

/// One line of the metrics stream. Target metrics are `None` when the target
/// split carries no labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_sup: f64,
    pub l_self: f64,
    pub l_anti: f64,
    pub l_adv: f64,
    pub l_total: f64,
    pub confident_fraction: f64,
    pub target_macro_f1: Option<f64>,
    pub target_accuracy: Option<f64>,
    pub source_macro_f1: f64,
}
