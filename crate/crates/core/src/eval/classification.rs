//! Confusion matrices, macro F1 and balanced accuracy.
//!
//! Macro F1 here is the harmonic mean of macro precision and macro recall,
//! not the mean of per-class F1 scores. A class with no gold and no
//! predicted examples contributes precision 0 and recall 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[gold][pred]` over 0-based labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_labels(gold: &[usize], pred: &[usize], num_classes: usize) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::Dimension {
                op: "confusion_matrix",
                lhs: vec![gold.len()],
                rhs: vec![pred.len()],
            });
        }
        let mut cm = ConfusionMatrix::new(num_classes);
        for (&g, &p) in gold.iter().zip(pred) {
            cm.add(g, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, gold: usize, pred: usize) -> Result<()> {
        let k = self.num_classes();
        for l in [gold, pred] {
            if l >= k {
                return Err(Error::Index {
                    op: "confusion_matrix",
                    index: l,
                    extent: k,
                });
            }
        }
        self.counts[gold][pred] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn precision(&self, class: usize) -> f64 {
        let predicted: u64 = self.counts.iter().map(|row| row[class]).sum();
        ratio(self.counts[class][class], predicted)
    }

    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.counts[class].iter().sum())
    }

    fn nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::contract("metrics of an empty confusion matrix"));
        }
        Ok(())
    }

    pub fn macro_precision(&self) -> Result<f64> {
        self.nonempty()?;
        let k = self.num_classes();
        Ok((0..k).map(|i| self.precision(i)).sum::<f64>() / k as f64)
    }

    pub fn macro_recall(&self) -> Result<f64> {
        self.nonempty()?;
        let k = self.num_classes();
        Ok((0..k).map(|i| self.recall(i)).sum::<f64>() / k as f64)
    }

    /// `2·P_macro·R_macro / (P_macro + R_macro)`, 0 when both are 0.
    pub fn macro_f1(&self) -> Result<f64> {
        let p = self.macro_precision()?;
        let r = self.macro_recall()?;
        Ok(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
    }

    /// Mean per-class recall.
    pub fn balanced_accuracy(&self) -> Result<f64> {
        self.macro_recall()
    }

    pub fn accuracy(&self) -> Result<f64> {
        self.nonempty()?;
        let diag: u64 = (0..self.num_classes()).map(|i| self.counts[i][i]).sum();
        Ok(diag as f64 / self.total() as f64)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    cm.macro_f1()
}

pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.balanced_accuracy()
}
