//! Multiple-choice accuracy, confusion matrices and per-class precision,
//! recall and F1.

mod report;

pub use report::{
    read_report, render_svg, render_text, write_report, EvalReport, ItemCounts, PerClass,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{predictions} predictions but {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("gold label {0:?} is not a known class")]
    UnknownGold(String),
    #[error("no items to score")]
    Empty,
    #[error("class lists differ")]
    ClassMismatch,
}

/// Fraction of predictions equal to gold; `None` (unmatched) counts as wrong.
pub fn mcq_accuracy(predictions: &[Option<usize>], gold: &[usize]) -> Result<f64, MetricsError> {
    if predictions.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = predictions
        .iter()
        .zip(gold)
        .filter(|(p, g)| **p == Some(**g))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Rows are actual classes, columns predicted classes. Predictions that
/// could not be mapped to any class land in `unmatched[actual]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub unmatched: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let c = classes.len();
        Self {
            classes,
            counts: vec![vec![0; c]; c],
            unmatched: vec![0; c],
        }
    }

    /// Records one item. `predicted` outside the class range counts as unmatched.
    pub fn record(&mut self, actual: usize, predicted: Option<usize>) {
        match predicted.filter(|&p| p < self.classes.len()) {
            Some(p) => self.counts[actual][p] += 1,
            None => self.unmatched[actual] += 1,
        }
    }

    pub fn from_indices(
        classes: Vec<String>,
        predicted: &[Option<usize>],
        gold: &[usize],
    ) -> Result<Self, MetricsError> {
        if predicted.len() != gold.len() {
            return Err(MetricsError::LengthMismatch {
                predictions: predicted.len(),
                gold: gold.len(),
            });
        }
        let mut cm = Self::new(classes);
        for (&g, &p) in gold.iter().zip(predicted) {
            if g >= cm.classes.len() {
                return Err(MetricsError::UnknownGold(g.to_string()));
            }
            cm.record(g, p);
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.unmatched.iter().sum::<u64>()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Adds another shard's counts.
    pub fn merge(&mut self, other: &Self) -> Result<(), MetricsError> {
        if self.classes != other.classes {
            return Err(MetricsError::ClassMismatch);
        }
        for (a, b) in self
            .counts
            .iter_mut()
            .flatten()
            .zip(other.counts.iter().flatten())
        {
            *a += b;
        }
        for (a, b) in self.unmatched.iter_mut().zip(&other.unmatched) {
            *a += b;
        }
        Ok(())
    }
}

/// Builds a matrix from label strings. Predicted labels that are `None` or
/// not in `classes` go to the unmatched column.
pub fn confusion_matrix<S: AsRef<str>>(
    predicted: &[Option<S>],
    gold: &[S],
    classes: &[String],
) -> Result<ConfusionMatrix, MetricsError> {
    if predicted.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predicted.len(),
            gold: gold.len(),
        });
    }
    let index = |s: &str| classes.iter().position(|c| c == s);
    let mut cm = ConfusionMatrix::new(classes.to_vec());
    for (g, p) in gold.iter().zip(predicted) {
        let g =
            index(g.as_ref()).ok_or_else(|| MetricsError::UnknownGold(g.as_ref().to_string()))?;
        cm.record(g, p.as_ref().and_then(|p| index(p.as_ref())));
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrfTable {
    pub classes: Vec<String>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub macro_avg: Prf,
    pub weighted_avg: Prf,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Precision = TP/(TP+FP) over mapped predictions; recall = TP/(TP+FN) where
/// unmatched predictions count as misses. Any zero denominator yields 0.
pub fn per_class_prf(cm: &ConfusionMatrix) -> PrfTable {
    let c = cm.classes.len();
    let mut t = PrfTable {
        classes: cm.classes.clone(),
        precision: Vec::with_capacity(c),
        recall: Vec::with_capacity(c),
        f1: Vec::with_capacity(c),
        support: Vec::with_capacity(c),
        macro_avg: Prf {
            p: 0.0,
            r: 0.0,
            f1: 0.0,
        },
        weighted_avg: Prf {
            p: 0.0,
            r: 0.0,
            f1: 0.0,
        },
    };
    for k in 0..c {
        let tp = cm.counts[k][k];
        let predicted: u64 = (0..c).map(|i| cm.counts[i][k]).sum();
        let actual: u64 = cm.counts[k].iter().sum::<u64>() + cm.unmatched[k];
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        t.precision.push(p);
        t.recall.push(r);
        t.f1.push(f1_score(p, r));
        t.support.push(actual);
    }
    if c > 0 {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / c as f64;
        t.macro_avg = Prf {
            p: mean(&t.precision),
            r: mean(&t.recall),
            f1: mean(&t.f1),
        };
    }
    let total: u64 = t.support.iter().sum();
    if total > 0 {
        let wmean = |v: &[f64]| {
            v.iter()
                .zip(&t.support)
                .map(|(x, &s)| x * s as f64)
                .sum::<f64>()
                / total as f64
        };
        t.weighted_avg = Prf {
            p: wmean(&t.precision),
            r: wmean(&t.recall),
            f1: wmean(&t.f1),
        };
    }
    t
}
