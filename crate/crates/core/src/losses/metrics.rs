use serde::{Deserialize, Serialize};

use crate::error::{invalid, AsifError, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(invalid(
                "predicted",
                format!("{} predictions for {} labels", predicted.len(), truth.len()),
            ));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let classes = counts.len();
        if counts.iter().any(|r| r.len() != classes) {
            return Err(invalid("counts", "confusion matrix must be square"));
        }
        Ok(Self {
            classes,
            counts: counts.into_iter().flatten().collect(),
        })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for l in [truth, predicted] {
            if l >= self.classes {
                return Err(AsifError::IndexOutOfRange {
                    what: "class label",
                    index: l,
                    limit: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// F1 of class `c`; 0 when the class has neither support nor
    /// predictions (or no true positives).
    pub fn f1(&self, c: usize) -> f64 {
        let tp = self.get(c, c) as f64;
        let predicted: u64 = (0..self.classes).map(|t| self.get(t, c)).sum();
        let actual: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        let denom = predicted as f64 + actual as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    }
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.classes == 0 || cm.total() == 0 {
        return Err(invalid("confusion matrix", "empty"));
    }
    Ok((0..cm.classes).map(|c| cm.f1(c)).sum::<f64>() / cm.classes as f64)
}

pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    (0..cm.classes).map(|c| cm.get(c, c)).sum::<u64>() as f64 / total as f64
}
