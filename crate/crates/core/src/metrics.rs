//! Precision/recall/F1 for the binary detector and macro averages for the
//! multi-class extraction heads. Undefined ratios (0/0) are reported as 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Metrics with `true` as the positive class.
pub fn binary_metrics(predicted: &[bool], gold: &[bool]) -> Result<BinaryMetrics> {
    if predicted.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} gold labels",
            predicted.len(),
            gold.len()
        )));
    }
    let mut m = BinaryMetrics {
        true_positives: 0,
        false_positives: 0,
        false_negatives: 0,
        true_negatives: 0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for (&p, &g) in predicted.iter().zip(gold) {
        match (p, g) {
            (true, true) => m.true_positives += 1,
            (true, false) => m.false_positives += 1,
            (false, true) => m.false_negatives += 1,
            (false, false) => m.true_negatives += 1,
        }
    }
    m.precision = ratio(m.true_positives, m.true_positives + m.false_positives);
    m.recall = ratio(m.true_positives, m.true_positives + m.false_negatives);
    m.f1 = f1(m.precision, m.recall);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Only classes that occur in the gold labels.
    pub per_class: Vec<ClassMetrics>,
}

/// Macro-averaged metrics over the classes present in `gold`.
pub fn macro_metrics(predicted: &[usize], gold: &[usize], n_classes: usize) -> Result<MacroMetrics> {
    if gold.is_empty() {
        return Err(Error::InvalidInput("no gold labels to evaluate against".into()));
    }
    if predicted.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} gold labels",
            predicted.len(),
            gold.len()
        )));
    }
    if let Some(&bad) = predicted.iter().chain(gold).find(|&&c| c >= n_classes) {
        return Err(Error::InvalidInput(format!("class {bad} out of range")));
    }
    let mut per_class = Vec::new();
    for class in 0..n_classes {
        let support = gold.iter().filter(|&&g| g == class).count();
        if support == 0 {
            continue;
        }
        let tp = predicted.iter().zip(gold).filter(|&(&p, &g)| p == class && g == class).count();
        let predicted_n = predicted.iter().filter(|&&p| p == class).count();
        let precision = ratio(tp, predicted_n);
        let recall = ratio(tp, support);
        per_class.push(ClassMetrics {
            class,
            support,
            precision,
            recall,
            f1: f1(precision, recall),
        });
    }
    let n = per_class.len() as f64;
    Ok(MacroMetrics {
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / n,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_thirds() {
        // TP=2, FP=1, FN=1
        let pred = [true, true, true, false, false];
        let gold = [true, true, false, true, false];
        let m = binary_metrics(&pred, &gold).unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_degenerate() {
        let gold = [true, false, true];
        assert_eq!(binary_metrics(&gold, &gold).unwrap().f1, 1.0);
        let none = binary_metrics(&[false; 3], &gold).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn macro_over_present_classes() {
        let gold = [0, 0, 0, 2, 2, 3];
        let perfect = macro_metrics(&gold, &gold, 4).unwrap();
        assert_eq!(perfect.per_class.len(), 3);
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
        let single = macro_metrics(&[1, 1], &[1, 1], 4).unwrap();
        assert_eq!(single.f1, 1.0);
        assert!(macro_metrics(&[], &[], 4).is_err());
    }

    #[test]
    fn three_class_confusion_by_hand() {
        // gold:      a a a a b b b c c c
        // predicted: a a b c b b a c c b
        let gold = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2];
        let pred = [0, 0, 1, 2, 1, 1, 0, 2, 2, 1];
        let m = macro_metrics(&pred, &gold, 3).unwrap();
        // a: tp 2, predicted 3, support 4 -> p 2/3, r 1/2, f1 4/7
        // b: tp 2, predicted 4, support 3 -> p 1/2, r 2/3, f1 4/7
        // c: tp 2, predicted 3, support 3 -> p 2/3, r 2/3, f1 2/3
        let p = (2.0 / 3.0 + 0.5 + 2.0 / 3.0) / 3.0;
        let r = (0.5 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0;
        let f = (4.0 / 7.0 + 4.0 / 7.0 + 2.0 / 3.0) / 3.0;
        assert!((m.precision - p).abs() < 1e-12);
        assert!((m.recall - r).abs() < 1e-12);
        assert!((m.f1 - f).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn f1_matches_confusion_count(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 100)) {
            let (pred, gold): (Vec<bool>, Vec<bool>) = pairs.iter().cloned().unzip();
            let m = binary_metrics(&pred, &gold).unwrap();
            let tp = pairs.iter().filter(|(p, g)| *p && *g).count() as f64;
            let fp = pairs.iter().filter(|(p, g)| *p && !*g).count() as f64;
            let fneg = pairs.iter().filter(|(p, g)| !*p && *g).count() as f64;
            let expected = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
            prop_assert!((m.f1 - expected).abs() < 1e-12);
        }
    }
}
