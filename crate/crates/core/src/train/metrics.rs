//! Confusion-matrix metrics for thresholded binary predictions.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub balanced_accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Derives every metric from the four confusion counts. Empty denominators
/// yield 0 by convention.
pub fn report_from_confusion(tp: usize, fp: usize, tn: usize, fn_: usize) -> EvalReport {
    let n = tp + fp + tn + fn_;
    EvalReport {
        tp,
        fp,
        tn,
        fn_,
        accuracy: ratio(tp + tn, n),
        precision: ratio(tp, tp + fp),
        // Harmonic mean of precision and recall, in count form so the
        // degenerate cases fall out of the same expression.
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        balanced_accuracy: (ratio(tp, tp + fn_) + ratio(tn, tn + fp)) / 2.0,
    }
}

/// Thresholds probabilities and tallies the confusion matrix.
/// A probability exactly at the threshold predicts positive.
pub fn evaluate_probs(probs: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    if probs.is_empty() {
        return Err(Error::Evaluation("cannot evaluate an empty dataset".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Evaluation(format!(
            "{} probabilities against {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Parameter(format!("threshold {threshold} outside (0, 1)")));
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Evaluation("non-finite probability".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Evaluation("labels must be 0 or 1".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(report_from_confusion(tp, fp, tn, fn_))
}
