//! Confusion matrices and per-class sensitivity / F1 with balanced
//! ("weighted") and plain accuracy.

use serde::Serialize;

use crate::error::{MilError, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_pairs(n_classes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(n_classes);
        for &(t, p) in pairs {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.n_classes || predicted >= self.n_classes {
            return Err(MilError::Input(format!(
                "pair ({truth}, {predicted}) outside {} classes",
                self.n_classes
            )));
        }
        self.counts[truth * self.n_classes + predicted] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.n_classes).map(|t| self.get(t, c)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Recall of class `c`; `None` when the class has no cases.
    pub fn sensitivity(&self, c: usize) -> Option<f64> {
        let support = self.row_sum(c);
        (support > 0).then(|| self.get(c, c) as f64 / support as f64)
    }

    /// `None` when class `c` is never predicted.
    pub fn precision(&self, c: usize) -> Option<f64> {
        let predicted = self.col_sum(c);
        (predicted > 0).then(|| self.get(c, c) as f64 / predicted as f64)
    }

    /// Harmonic mean of precision and recall, 0 when both are 0 or undefined.
    pub fn f1(&self, c: usize) -> f64 {
        let p = self.precision(c).unwrap_or(0.0);
        let r = self.sensitivity(c).unwrap_or(0.0);
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    /// Mean sensitivity over classes with at least one case.
    pub fn weighted_accuracy(&self) -> Option<f64> {
        let recalls: Vec<f64> = (0..self.n_classes).filter_map(|c| self.sensitivity(c)).collect();
        (!recalls.is_empty()).then(|| recalls.iter().sum::<f64>() / recalls.len() as f64)
    }

    /// Share of all cases predicted correctly.
    pub fn micro_accuracy(&self) -> Option<f64> {
        let total = self.total();
        let correct: u64 = (0..self.n_classes).map(|c| self.get(c, c)).sum();
        (total > 0).then(|| correct as f64 / total as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub sensitivity: Option<f64>,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_accuracy: f64,
    pub micro_accuracy: f64,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn new(confusion: ConfusionMatrix, class_names: &[String]) -> Result<Self> {
        if class_names.len() != confusion.n_classes() {
            return Err(MilError::Input(format!(
                "{} class names for a {}-class confusion matrix",
                class_names.len(),
                confusion.n_classes()
            )));
        }
        let (Some(weighted), Some(micro)) = (confusion.weighted_accuracy(), confusion.micro_accuracy()) else {
            return Err(MilError::Input("no cases".into()));
        };
        let mut notes = Vec::new();
        let per_class = class_names
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let support = confusion.row_sum(c);
                if support == 0 {
                    notes.push(format!("class {name} has no cases and is excluded from weighted accuracy"));
                }
                ClassMetrics {
                    name: name.clone(),
                    support,
                    sensitivity: confusion.sensitivity(c),
                    f1: confusion.f1(c),
                }
            })
            .collect();
        Ok(EvalReport {
            confusion,
            per_class,
            weighted_accuracy: weighted,
            micro_accuracy: micro,
            notes,
        })
    }
}
