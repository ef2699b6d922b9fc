//! Classification metrics: confusion matrix, accuracy, macro recall,
//! macro F1, and the JSON evaluation report.
//!
//! Macro averages run over classes that actually appear in the truth
//! labels; zero-support classes are excluded rather than counted as zero,
//! and their exclusion is visible in the report via `support == 0`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// K x K counts; rows index the true class, columns the predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("{truth} truth labels vs {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("metrics over an empty confusion matrix")]
    EmptyMatrix,
}

/// Builds the confusion matrix of a prediction run.
pub fn confusion(
    truth: &[usize],
    predicted: &[usize],
    k: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch { truth: truth.len(), predicted: predicted.len() });
    }
    let mut counts = vec![0u64; k * k];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k {
            return Err(MetricsError::LabelOutOfRange { label: t, k });
        }
        if p >= k {
            return Err(MetricsError::LabelOutOfRange { label: p, k });
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

impl ConfusionMatrix {
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), k * k, "confusion matrix needs k*k counts");
        ConfusionMatrix { k, counts }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// True-sample count of one class (row sum).
    pub fn support(&self, class: usize) -> u64 {
        (0..self.k).map(|p| self.count(class, p)).sum()
    }

    fn predicted_total(&self, class: usize) -> u64 {
        (0..self.k).map(|t| self.count(t, class)).sum()
    }

    /// diag / row-sum; None when the class never occurs in the truth.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let support = self.support(class);
        (support > 0).then(|| self.count(class, class) as f64 / support as f64)
    }

    /// diag / column-sum; 0 when the class is never predicted.
    pub fn precision(&self, class: usize) -> f64 {
        let predicted = self.predicted_total(class);
        if predicted == 0 {
            0.0
        } else {
            self.count(class, class) as f64 / predicted as f64
        }
    }

    /// Harmonic mean of precision and recall; 0 when both vanish. None for
    /// zero-support classes.
    pub fn f1(&self, class: usize) -> Option<f64> {
        let r = self.recall(class)?;
        let p = self.precision(class);
        Some(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let trace: u64 = (0..cm.k).map(|c| cm.count(c, c)).sum();
    Ok(trace as f64 / total as f64)
}

fn macro_over_supported<F: Fn(usize) -> Option<f64>>(
    cm: &ConfusionMatrix,
    per_class: F,
) -> Result<f64, MetricsError> {
    let values: Vec<f64> = (0..cm.k).filter_map(per_class).collect();
    if values.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn macro_recall(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    macro_over_supported(cm, |c| cm.recall(c))
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    macro_over_supported(cm, |c| cm.f1(c))
}

/// Per-class block of the evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// The JSON evaluation report. Zero-support classes appear with
/// `support: 0` and zeroed scores but do not influence the macro averages.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub n: u64,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self, MetricsError> {
        let mut per_class = BTreeMap::new();
        for c in 0..cm.k() {
            per_class.insert(
                c.to_string(),
                ClassMetrics {
                    precision: cm.precision(c),
                    recall: cm.recall(c).unwrap_or(0.0),
                    f1: cm.f1(c).unwrap_or(0.0),
                    support: cm.support(c),
                },
            );
        }
        Ok(MetricsReport {
            accuracy: accuracy(cm)?,
            macro_recall: macro_recall(cm)?,
            macro_f1: macro_f1(cm)?,
            per_class,
            n: cm.total(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}
