use rand::seq::SliceRandom;

use crate::dataset::{patients, LabeledBeat};
use crate::error::{Error, Result};
use crate::experiment::{make_splits, run_on_splits, ExperimentConfig};

use super::{f1_score, mean_std, ClassMetrics, MetricsReport};

#[derive(Debug, Clone)]
pub struct FoldReport {
    pub test_patients: Vec<String>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Per-class precision and recall averaged over folds; F1 is averaged
    /// too, not recomputed from the averages.
    pub mean_per_class: Vec<ClassMetrics>,
}

/// Test-patient groups for `folds` rounds of `holdout` patients each,
/// pairwise disjoint, drawn from the configured split seed.
pub fn fold_assignments(cfg: &ExperimentConfig, beats: &[LabeledBeat]) -> Result<Vec<Vec<String>>> {
    let mut ids = patients(beats);
    let (folds, h) = (cfg.eval.folds, cfg.eval.test_patients);
    if ids.len() < 3 {
        return Err(Error::data(format!(
            "cross-validation needs >= 3 patients, got {}",
            ids.len()
        )));
    }
    if folds == 0 || h == 0 || folds * h > ids.len() || h + cfg.eval.val_patients >= ids.len() {
        return Err(Error::data(format!(
            "{folds} folds of {h} test patients, each leaving {} validation patients and at least one \
             training patient, do not fit in {} patients",
            cfg.eval.val_patients,
            ids.len()
        )));
    }
    ids.shuffle(&mut cfg.split_seeds().rng("folds"));
    Ok(ids.chunks(h).take(folds).map(|c| c.to_vec()).collect())
}

/// Repeated random patient holdout: each fold tests on its own patients
/// and trains on the others.
pub fn crossvalidate(cfg: &ExperimentConfig, beats: &[LabeledBeat]) -> Result<CvReport> {
    let mut folds = Vec::new();
    for held in fold_assignments(cfg, beats)? {
        let splits = make_splits(cfg, beats, Some(&held))?;
        let run = run_on_splits(cfg, &splits, &mut |_| {})?;
        folds.push(FoldReport {
            test_patients: held,
            report: run.test,
        });
    }
    Ok(summarize(folds))
}

pub fn summarize(folds: Vec<FoldReport>) -> CvReport {
    let accs: Vec<f64> = folds.iter().map(|f| f.report.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let mut mean_per_class = Vec::new();
    if let Some(first) = folds.first() {
        for (c, m) in first.report.per_class.iter().enumerate() {
            let avg = |get: fn(&ClassMetrics) -> f64| {
                mean_std(&folds.iter().map(|f| get(&f.report.per_class[c])).collect::<Vec<_>>()).0
            };
            let (precision, recall) = (avg(|m| m.precision), avg(|m| m.recall));
            let f1 = if folds.len() == 1 {
                f1_score(precision, recall)
            } else {
                avg(|m| m.f1)
            };
            mean_per_class.push(ClassMetrics {
                label: m.label,
                precision,
                recall,
                f1,
            });
        }
    }
    CvReport {
        folds,
        mean_accuracy,
        std_accuracy,
        mean_per_class,
    }
}

/// One full training run per threshold on shared splits; returns
/// `(tau, clean test accuracy)` sorted by descending `tau`.
pub fn confidence_sweep(cfg: &ExperimentConfig, beats: &[LabeledBeat], taus: &[f64]) -> Result<Vec<(f64, f64)>> {
    let splits = make_splits(cfg, beats, None)?;
    let mut sorted = taus.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut rows = Vec::with_capacity(sorted.len());
    for tau in sorted {
        let mut c = cfg.clone();
        c.train.routing.tau = tau;
        rows.push((tau, run_on_splits(&c, &splits, &mut |_| {})?.test.accuracy));
    }
    Ok(rows)
}
