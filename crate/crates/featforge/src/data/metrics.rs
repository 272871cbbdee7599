//! The two downstream scores: macro-averaged F1 for classification and
//! 1-RAE for regression.

use super::DataError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    F1Macro,
    OneMinusRae,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricKind::F1Macro => f.write_str("f1_macro"),
            MetricKind::OneMinusRae => f.write_str("one_minus_rae"),
        }
    }
}

/// Macro F1: per-class F1 = 2PR/(P+R) with precision TP/(TP+FP) and recall
/// TP/(TP+FN), averaged over the classes present in `truth`. A class the
/// predictor never gets right contributes 0 rather than poisoning the mean
/// with NaN.
pub fn f1_macro(pred: &[usize], truth: &[usize]) -> Result<f64, DataError> {
    if pred.len() != truth.len() {
        return Err(DataError::LengthMismatch(pred.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(DataError::LengthMismatch(0, 0));
    }
    let mut classes: Vec<usize> = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut sum = 0.0;
    for &c in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(sum / classes.len() as f64)
}

/// 1 − Σ|pred−truth| / Σ|truth−mean(truth)|. Equals 1 only for a perfect
/// prediction and 0 for the constant-mean predictor; worse-than-mean
/// predictors go negative and that is deliberately not clipped.
pub fn one_minus_rae(pred: &[f64], truth: &[f64]) -> Result<f64, DataError> {
    if pred.len() != truth.len() {
        return Err(DataError::LengthMismatch(pred.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(DataError::LengthMismatch(0, 0));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let denom: f64 = truth.iter().map(|&t| (t - mean).abs()).sum();
    if denom == 0.0 {
        return Err(DataError::ZeroDenominator);
    }
    let num: f64 = pred.iter().zip(truth).map(|(&p, &t)| (p - t).abs()).sum();
    Ok(1.0 - num / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one() {
        assert_eq!(f1_macro(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(one_minus_rae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
    }

    #[test]
    fn balanced_binary_with_symmetric_confusion() {
        // Class 1: TP=2, FP=1, FN=1; class 0 mirrored. Per-class F1 = 2/3.
        let truth = [1, 1, 1, 0, 0, 0];
        let pred = [1, 1, 0, 1, 0, 0];
        let f1 = f1_macro(&pred, &truth).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_one_class_on_balanced_binary_is_one_third() {
        let truth = [0, 0, 1, 1];
        let pred = [1, 1, 1, 1];
        let f1 = f1_macro(&pred, &truth).unwrap();
        assert!((f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn classes_absent_from_truth_are_ignored() {
        // Predicting a phantom class hurts recall of real ones but the
        // phantom itself is not averaged in.
        let truth = [0, 0, 0];
        let pred = [0, 5, 0];
        let f1 = f1_macro(&pred, &truth).unwrap();
        let p: f64 = 1.0;
        let r = 2.0 / 3.0;
        assert!((f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
    }

    #[test]
    fn constant_mean_predictor_scores_zero() {
        let truth = [0.0, 2.0, 4.0];
        let pred = [2.0, 2.0, 2.0];
        assert_eq!(one_minus_rae(&pred, &truth).unwrap(), 0.0);
    }

    #[test]
    fn hand_arithmetic_case() {
        assert_eq!(one_minus_rae(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn worse_than_mean_goes_negative() {
        let truth = [0.0, 2.0];
        let pred = [4.0, -2.0];
        assert!(one_minus_rae(&pred, &truth).unwrap() < 0.0);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(matches!(
            f1_macro(&[0], &[0, 1]),
            Err(DataError::LengthMismatch(1, 2))
        ));
        assert!(matches!(
            one_minus_rae(&[1.0], &[1.0, 1.0]),
            Err(DataError::LengthMismatch(1, 2))
        ));
        assert!(matches!(
            one_minus_rae(&[1.0, 1.0], &[3.0, 3.0]),
            Err(DataError::ZeroDenominator)
        ));
    }
}
