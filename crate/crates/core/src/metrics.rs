//! Classification metrics: confusion matrix, per-class precision, recall,
//! F1, and support-weighted aggregates.

use crate::error::{Error, Result};

/// Confusion counts; rows are gold classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn from_pairs(gold: &[usize], pred: &[usize], n_classes: usize) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::invalid(format!(
                "{} gold labels vs {} predictions",
                gold.len(),
                pred.len()
            )));
        }
        if gold.is_empty() {
            return Err(Error::invalid("metrics need at least one prediction"));
        }
        let mut counts = vec![0usize; n_classes * n_classes];
        for (&g, &p) in gold.iter().zip(pred) {
            if g >= n_classes || p >= n_classes {
                return Err(Error::invalid(format!(
                    "label pair ({g}, {p}) out of range for {n_classes} classes"
                )));
            }
            counts[g * n_classes + p] += 1;
        }
        Ok(ConfusionMatrix { n_classes, counts })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn count(&self, gold: usize, pred: usize) -> usize {
        self.counts[gold * self.n_classes + pred]
    }

    /// Number of gold instances of a class.
    pub fn support(&self, class: usize) -> usize {
        (0..self.n_classes).map(|p| self.count(class, p)).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Scores of one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Full metric set derived from a confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    /// Fraction of correct predictions; equals the support-weighted mean of
    /// per-class recall.
    pub accuracy: f64,
    /// Support-weighted mean of per-class F1.
    pub weighted_f1: f64,
}

impl Metrics {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Metrics {
        let k = cm.n_classes();
        let total = cm.total() as f64;
        let mut per_class = Vec::with_capacity(k);
        let mut correct = 0usize;
        let mut weighted_f1 = 0.0;
        for c in 0..k {
            let support = cm.support(c);
            let tp = cm.count(c, c);
            correct += tp;
            let predicted: usize = (0..k).map(|g| cm.count(g, c)).sum();
            let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            weighted_f1 += support as f64 / total * f1;
            per_class.push(ClassMetrics { support, precision, recall, f1 });
        }
        Metrics {
            per_class,
            accuracy: correct as f64 / total,
            weighted_f1,
        }
    }

    pub fn from_pairs(gold: &[usize], pred: &[usize], n_classes: usize) -> Result<Metrics> {
        Ok(Metrics::from_confusion(&ConfusionMatrix::from_pairs(gold, pred, n_classes)?))
    }
}
