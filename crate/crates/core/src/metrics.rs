//! Attack and detection scoring: clean accuracy, attack success rate,
//! confusion counts, detection accuracy, and F1.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts of a detection run ("flagged" is the predicted positive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_positives + self.true_negatives + self.false_positives + self.false_negatives
    }
}

/// Fraction of predictions matching the true labels on clean samples.
pub fn clean_accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Domain("clean accuracy of an empty set".into()));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Fraction of triggered samples predicted as the attacker's target label.
/// No internal filtering: every prediction passed in is scored.
pub fn attack_success_rate(predictions_on_triggered: &[u8], target_label: u8) -> Result<f64> {
    if predictions_on_triggered.is_empty() {
        return Err(Error::Domain("attack success rate of an empty set".into()));
    }
    let hits = predictions_on_triggered
        .iter()
        .filter(|&&p| p == target_label)
        .count();
    Ok(hits as f64 / predictions_on_triggered.len() as f64)
}

/// Confusion counts between a flagged index set and the ground-truth poison
/// index set over `n_total` scored samples.
pub fn confusion(flagged: &[usize], ground_truth: &[usize], n_total: usize) -> Result<Confusion> {
    let flagged: HashSet<usize> = flagged.iter().copied().collect();
    let truth: HashSet<usize> = ground_truth.iter().copied().collect();
    for &i in flagged.iter().chain(truth.iter()) {
        if i >= n_total {
            return Err(Error::Shape(format!(
                "index {i} out of range for {n_total} samples"
            )));
        }
    }
    let true_positives = flagged.intersection(&truth).count();
    let false_positives = flagged.len() - true_positives;
    let false_negatives = truth.len() - true_positives;
    let true_negatives = n_total - true_positives - false_positives - false_negatives;
    Ok(Confusion {
        true_positives,
        true_negatives,
        false_positives,
        false_negatives,
    })
}

/// DA = (TP + TN) / total.
pub fn detection_accuracy(c: &Confusion) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Domain("detection accuracy over zero samples".into()));
    }
    Ok((c.true_positives + c.true_negatives) as f64 / total as f64)
}

/// F1 = 2·TP / (2·TP + FP + FN); `None` when the denominator is zero
/// (no positives anywhere), never a silent 0 or 1.
pub fn f1(c: &Confusion) -> Option<f64> {
    let denom = 2 * c.true_positives + c.false_positives + c.false_negatives;
    if denom == 0 {
        return None;
    }
    Some(2.0 * c.true_positives as f64 / denom as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_accuracy_basics() {
        assert_eq!(clean_accuracy(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(clean_accuracy(&[0, 0], &[0, 1]).unwrap(), 0.5);
        assert_eq!(clean_accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!(matches!(clean_accuracy(&[], &[]), Err(Error::Domain(_))));
    }

    #[test]
    fn asr_basics() {
        assert_eq!(attack_success_rate(&[1, 1, 1], 1).unwrap(), 1.0);
        assert_eq!(attack_success_rate(&[1, 0, 1, 0], 1).unwrap(), 0.5);
        assert!(matches!(
            attack_success_rate(&[], 1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn confusion_exact_match() {
        let truth: Vec<usize> = (0..5).collect();
        let c = confusion(&truth, &truth, 1000).unwrap();
        assert_eq!(
            c,
            Confusion {
                true_positives: 5,
                true_negatives: 995,
                false_positives: 0,
                false_negatives: 0
            }
        );
    }

    #[test]
    fn confusion_with_two_extra_flags() {
        // 7 flagged containing all 5 true poisons.
        let truth: Vec<usize> = (0..5).collect();
        let flagged: Vec<usize> = (0..7).collect();
        let c = confusion(&flagged, &truth, 1000).unwrap();
        assert_eq!(c.true_positives, 5);
        assert_eq!(c.false_positives, 2);
        assert_eq!(c.false_negatives, 0);
        assert_eq!(c.true_negatives, 993);
        assert!((detection_accuracy(&c).unwrap() - 0.998).abs() < 1e-12);
        assert!((f1(&c).unwrap() - 10.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_disjoint_sets() {
        let c = confusion(&[10, 11], &[0, 1, 2], 100).unwrap();
        assert_eq!(c.true_positives, 0);
        assert_eq!(f1(&c), Some(0.0));
    }

    #[test]
    fn confusion_out_of_range_is_shape_error() {
        assert!(matches!(
            confusion(&[5], &[1], 5),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn perfect_detection() {
        let c = confusion(&[3, 4], &[3, 4], 10).unwrap();
        assert_eq!(detection_accuracy(&c).unwrap(), 1.0);
        assert_eq!(f1(&c), Some(1.0));
    }

    #[test]
    fn f1_absent_without_any_positives() {
        let c = confusion(&[], &[], 50).unwrap();
        assert_eq!(f1(&c), None);
        assert_eq!(detection_accuracy(&c).unwrap(), 1.0);
    }

    #[test]
    fn f1_ignores_true_negatives() {
        let a = Confusion {
            true_positives: 4,
            true_negatives: 100,
            false_positives: 2,
            false_negatives: 1,
        };
        let b = Confusion {
            true_negatives: 100_000,
            ..a
        };
        assert_eq!(f1(&a), f1(&b));
    }

    #[test]
    fn counts_always_sum_to_total() {
        let c = confusion(&[1, 2, 3], &[2, 3, 4, 5], 20).unwrap();
        assert_eq!(c.total(), 20);
    }
}
