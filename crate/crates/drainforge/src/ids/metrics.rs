//! Confusion counts and the precision/recall family.

use serde::{Deserialize, Serialize};

use super::IdsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Scores binary predictions against ground truth. Class 1 is "attack".
///
/// Conventions for empty denominators: precision and recall are 0 when
/// undefined, and f1 is 0 whenever precision + recall is 0.
pub fn evaluate(pred: &[u8], truth: &[u8]) -> Result<Metrics, IdsError> {
    if pred.len() != truth.len() {
        return Err(IdsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &t) in pred.iter().zip(truth) {
        if p > 1 {
            return Err(IdsError::BadLabel(p));
        }
        if t > 1 {
            return Err(IdsError::BadLabel(t));
        }
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            (0, 0) => tn += 1,
            _ => unreachable!(),
        }
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let total = tp + fp + fn_ + tn;
    let accuracy = ratio(tp + tn, total);
    Ok(Metrics {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
        precision,
        recall,
        f1,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let truth = [0, 1, 0, 1, 1];
        let m = evaluate(&truth, &truth).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn all_negative_on_twenty_percent_positives() {
        let truth: Vec<u8> = (0..100).map(|i| u8::from(i < 20)).collect();
        let pred = vec![0u8; 100];
        let m = evaluate(&pred, &truth).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f1, 0.0);
        assert_eq!(m.accuracy, 0.8);
    }

    #[test]
    fn hand_computed_confusion() {
        // TP=40, FP=10, FN=40, TN=10.
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..40 {
            pred.push(1);
            truth.push(1);
        }
        for _ in 0..10 {
            pred.push(1);
            truth.push(0);
        }
        for _ in 0..40 {
            pred.push(0);
            truth.push(1);
        }
        for _ in 0..10 {
            pred.push(0);
            truth.push(0);
        }
        let m = evaluate(&pred, &truth).unwrap();
        assert_eq!(m.precision, 0.8);
        assert_eq!(m.recall, 0.5);
        assert!((m.f1 - 0.6153846153846154).abs() < 1e-12);
        let n = (m.true_positives + m.false_positives + m.false_negatives + m.true_negatives)
            as f64;
        assert_eq!(n, 100.0);
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            evaluate(&[0, 1], &[0]),
            Err(IdsError::LengthMismatch { .. })
        ));
    }
}
