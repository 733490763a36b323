//! Confusion matrices, per-class precision/recall/F1 and report files.
//!
//! Reports use the merged five-class view, with E folded into Q.

mod cv;
mod report;

pub use cv::{confidence_sweep, crossvalidate, fold_assignments, summarize, CvReport, FoldReport};
pub use report::{format_confusion, format_metrics_csv, format_sweep_csv, write_report, METRICS_HEADER, SWEEP_HEADER};

use crate::error::{Error, Result};
use crate::label::{Label, Taxonomy};

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub taxonomy: Taxonomy,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn zeros(taxonomy: Taxonomy) -> Self {
        let n = taxonomy.len();
        Self {
            taxonomy,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }

    /// True count per class.
    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Predicted count per class.
    pub fn col_sums(&self) -> Vec<usize> {
        (0..self.counts.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.taxonomy != self.taxonomy {
            return Err(Error::contract("merging confusion matrices of different taxonomies"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Labels must already be in `taxonomy`'s view.
pub fn confusion_matrix(preds: &[Label], truths: &[Label], taxonomy: Taxonomy) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut m = ConfusionMatrix::zeros(taxonomy);
    for (&p, &t) in preds.iter().zip(truths) {
        m.counts[taxonomy.index_of(t)?][taxonomy.index_of(p)?] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Harmonic mean; zero when both inputs are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Undefined ratios (no predictions, no true samples) are reported as 0.
pub fn precision_recall_f1(m: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let rows = m.row_sums();
    let cols = m.col_sums();
    m.taxonomy
        .labels()
        .iter()
        .enumerate()
        .map(|(c, &label)| {
            let tp = m.counts[c][c];
            let precision = ratio(tp, cols[c]);
            let recall = ratio(tp, rows[c]);
            ClassMetrics {
                label,
                precision,
                recall,
                f1: f1_score(precision, recall),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Self {
            per_class: precision_recall_f1(&confusion),
            accuracy: confusion.accuracy(),
            confusion,
        }
    }

    /// Projects both label lists into the merged view first.
    pub fn from_predictions(preds: &[Label], truths: &[Label]) -> Result<Self> {
        let tax = Taxonomy::Merged;
        let p: Vec<Label> = preds.iter().map(|&l| tax.project(l)).collect();
        let t: Vec<Label> = truths.iter().map(|&l| tax.project(l)).collect();
        Ok(Self::from_confusion(confusion_matrix(&p, &t, tax)?))
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
