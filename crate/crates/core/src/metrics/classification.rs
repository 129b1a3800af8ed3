use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::corpus::Label;

/// Confusion counts with human as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Which class's F1 a caller reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Side {
    Human,
    Bot,
}

impl std::str::FromStr for F1Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human" => Ok(F1Side::Human),
            "bot" => Ok(F1Side::Bot),
            other => Err(format!("unknown F1 side {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub f1_human: f64,
    pub f1_bot: f64,
    pub counts: ConfusionCounts,
}

impl ClassificationReport {
    pub fn f1(&self, side: F1Side) -> f64 {
        match side {
            F1Side::Human => self.f1_human,
            F1Side::Bot => self.f1_bot,
        }
    }
}

/// `2TP / (2TP + FP + FN)`; a class that is neither present nor predicted
/// scores 1 since there is nothing to get wrong.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// A probability at or above `threshold` predicts human.
pub fn classification_metrics(
    probs: &[f64],
    labels: &[Label],
    threshold: f64,
) -> Result<ClassificationReport, MetricError> {
    if probs.is_empty() {
        return Err(MetricError::Empty("classification input"));
    }
    if probs.len() != labels.len() {
        return Err(MetricError::LengthMismatch(probs.len(), labels.len()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in probs.iter().zip(labels) {
        match (p >= threshold, l.is_human()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(ClassificationReport {
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        f1_human: f1_from_counts(c.tp, c.fp, c.fn_),
        f1_bot: f1_from_counts(c.tn, c.fn_, c.fp),
        counts: c,
    })
}
