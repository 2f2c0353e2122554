//! Confusion matrix and F1 scores over the three sentiment classes.
//!
//! Undefined ratios (0/0) count as 0, so every score is total.

use crate::corpus::{Sentiment, NUM_CLASSES};
use crate::error::{Error, Result};

/// Rows are gold classes, columns predicted classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2PR / (P + R)`, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn precision(&self, c: usize) -> f64 {
        ratio(self.counts[c][c], self.col_sum(c))
    }

    pub fn recall(&self, c: usize) -> f64 {
        ratio(self.counts[c][c], self.row_sum(c))
    }

    pub fn accuracy(&self) -> f64 {
        ratio((0..NUM_CLASSES).map(|c| self.counts[c][c]).sum(), self.total())
    }
}

pub fn confusion(preds: &[usize], golds: &[usize]) -> Result<ConfusionMatrix> {
    if preds.len() != golds.len() {
        return Err(Error::dim("confusion", preds.len(), golds.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= NUM_CLASSES {
            return Err(Error::ClassIndex(p));
        }
        if g >= NUM_CLASSES {
            return Err(Error::ClassIndex(g));
        }
        cm.counts[g][p] += 1;
    }
    Ok(cm)
}

pub fn f1_class(cm: &ConfusionMatrix, c: usize) -> f64 {
    f1_score(cm.precision(c), cm.recall(c))
}

/// Unweighted mean of the per-class F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    (0..NUM_CLASSES).map(|c| f1_class(cm, c)).sum::<f64>() / NUM_CLASSES as f64
}

/// Per-class F1 weighted by gold support.
pub fn weighted_f1(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    (0..NUM_CLASSES)
        .map(|c| f1_class(cm, c) * cm.row_sum(c) as f64)
        .sum::<f64>()
        / total as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Averaging {
    Macro,
    Weighted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub label: Sentiment,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub classes: Vec<ClassReport>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub total: u64,
}

impl Report {
    pub fn new(cm: &ConfusionMatrix) -> Self {
        let classes = Sentiment::ALL
            .iter()
            .map(|&label| {
                let c = label.index();
                ClassReport {
                    label,
                    precision: cm.precision(c),
                    recall: cm.recall(c),
                    f1: f1_class(cm, c),
                    support: cm.row_sum(c),
                }
            })
            .collect();
        Report {
            classes,
            macro_f1: macro_f1(cm),
            weighted_f1: weighted_f1(cm),
            accuracy: cm.accuracy(),
            total: cm.total(),
        }
    }

    pub fn headline(&self, avg: Averaging) -> f64 {
        match avg {
            Averaging::Macro => self.macro_f1,
            Averaging::Weighted => self.weighted_f1,
        }
    }

    pub fn to_table(&self, avg: Averaging) -> String {
        let mut out = format!(
            "{:<11} {:>9} {:>9} {:>9} {:>8}\n",
            "class", "precision", "recall", "f1", "support"
        );
        for c in &self.classes {
            out.push_str(&format!(
                "{:<11} {:>9.4} {:>9.4} {:>9.4} {:>8}\n",
                c.label.as_str(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            ));
        }
        let name = match avg {
            Averaging::Macro => "macro-f1",
            Averaging::Weighted => "weighted-f1",
        };
        out.push_str(&format!("{:<11} {:>9} {:>9} {:>9.4} {:>8}\n", name, "", "", self.headline(avg), self.total));
        out.push_str(&format!("{:<11} {:>9} {:>9} {:>9.4} {:>8}\n", "accuracy", "", "", self.accuracy, self.total));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for c in &self.classes {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.label.as_str(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            ));
        }
        out.push_str(&format!("macro,,,{},{}\n", self.macro_f1, self.total));
        out.push_str(&format!("weighted,,,{},{}\n", self.weighted_f1, self.total));
        out
    }
}
