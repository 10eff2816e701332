use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{Category, NUM_CATEGORIES};

/// One-vs-rest counts and scores for one class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ClassMetrics {
    /// Scores from counts; every 0/0 ratio is taken as 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub top1: f64,
    /// Unweighted mean of the ten per-class F1 scores.
    pub f1_macro: f64,
    pub per_class: Vec<ClassMetrics>,
    pub n: usize,
}

fn check(predictions: &[Category], labels: &[Category]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::SizeMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("predictions and labels"));
    }
    Ok(())
}

/// Fraction of positions where prediction and label agree.
pub fn top1(predictions: &[Category], labels: &[Category]) -> Result<f64> {
    check(predictions, labels)?;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Per-class precision, recall and F1 plus their macro average over all
/// ten categories (absent classes contribute 0).
pub fn f1_macro(predictions: &[Category], labels: &[Category]) -> Result<EvalResult> {
    check(predictions, labels)?;
    let mut tp = [0usize; NUM_CATEGORIES];
    let mut fp = [0usize; NUM_CATEGORIES];
    let mut fn_ = [0usize; NUM_CATEGORIES];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[l.id()] += 1;
        } else {
            fp[p.id()] += 1;
            fn_[l.id()] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..NUM_CATEGORIES)
        .map(|c| ClassMetrics::from_counts(tp[c], fp[c], fn_[c]))
        .collect();
    let f1_macro = per_class.iter().map(|m| m.f1).sum::<f64>() / NUM_CATEGORIES as f64;
    Ok(EvalResult {
        top1: tp.iter().sum::<usize>() as f64 / labels.len() as f64,
        f1_macro,
        per_class,
        n: labels.len(),
    })
}
