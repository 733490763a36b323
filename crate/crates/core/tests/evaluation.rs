use negres::dataset::LabeledBeat;
use negres::evaluation::{
    confidence_sweep, confusion_matrix, crossvalidate, f1_score, fold_assignments, format_confusion,
    format_metrics_csv, format_sweep_csv, precision_recall_f1, ConfusionMatrix, MetricsReport, METRICS_HEADER,
};
use negres::experiment::{make_splits, ExperimentConfig, DEFAULT_TAUS};
use negres::label::{Label, Taxonomy};
use negres::model::NetworkSpec;
use negres::rng::SeedStream;
use negres::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use Label::*;

const MERGED: [Label; 5] = [N, V, S, A, Q];

#[test]
fn perfect_predictions_give_diagonal() {
    let labels = [N, V, S, A, Q, Q, N];
    let m = confusion_matrix(&labels, &labels, Taxonomy::Merged).unwrap();
    for (i, row) in m.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if i != j {
                assert_eq!(c, 0);
            }
        }
    }
    assert_eq!(m.trace(), 7);
    assert_eq!(m.accuracy(), 1.0);
}

#[test]
fn single_sample_lands_at_truth_prediction() {
    let m = confusion_matrix(&[V], &[N], Taxonomy::Merged).unwrap();
    assert_eq!(m.counts[0][1], 1);
    assert_eq!(m.total(), 1);
}

fn random_labels(seed: u64, n: usize) -> (Vec<Label>, Vec<Label>) {
    let mut rng = SeedStream::new(seed).rng("labels");
    let mut pick = || MERGED[rng.random_range(0..5)];
    let truths: Vec<Label> = (0..n).map(|_| pick()).collect();
    let preds: Vec<Label> = (0..n).map(|_| pick()).collect();
    (preds, truths)
}

#[test]
fn order_invariance_and_marginals() {
    let (preds, truths) = random_labels(1, 500);
    let m = confusion_matrix(&preds, &truths, Taxonomy::Merged).unwrap();
    let mut pairs: Vec<(Label, Label)> = preds.iter().copied().zip(truths.iter().copied()).collect();
    pairs.shuffle(&mut SeedStream::new(2).rng("perm"));
    let (p2, t2): (Vec<Label>, Vec<Label>) = pairs.into_iter().unzip();
    assert_eq!(m, confusion_matrix(&p2, &t2, Taxonomy::Merged).unwrap());
    assert_eq!(m.total(), 500);
    for (i, l) in MERGED.iter().enumerate() {
        assert_eq!(m.row_sums()[i], truths.iter().filter(|&&t| t == *l).count());
        assert_eq!(m.col_sums()[i], preds.iter().filter(|&&p| p == *l).count());
    }
    assert_eq!(m.accuracy(), m.trace() as f64 / m.total() as f64);
}

#[test]
fn metrics_match_direct_count() {
    for seed in 0..20 {
        let (preds, truths) = random_labels(seed, 300);
        let report = MetricsReport::from_predictions(&preds, &truths).unwrap();
        for (m, &l) in report.per_class.iter().zip(&MERGED) {
            let tp = preds.iter().zip(&truths).filter(|(p, t)| **p == l && **t == l).count() as f64;
            let predicted = preds.iter().filter(|&&p| p == l).count() as f64;
            let actual = truths.iter().filter(|&&t| t == l).count() as f64;
            assert_eq!(m.label, l);
            assert!((m.precision - tp / predicted).abs() < 1e-15);
            assert!((m.recall - tp / actual).abs() < 1e-15);
        }
        let hits = preds.iter().zip(&truths).filter(|(p, t)| p == t).count();
        assert_eq!(report.accuracy, hits as f64 / 300.0);
    }
}

proptest! {
    #[test]
    fn f1_lies_between_precision_and_recall(counts in prop::collection::vec(0usize..50, 25)) {
        let m = ConfusionMatrix {
            taxonomy: Taxonomy::Merged,
            counts: counts.chunks(5).map(|c| c.to_vec()).collect(),
        };
        for c in precision_recall_f1(&m) {
            let (lo, hi) = (c.precision.min(c.recall), c.precision.max(c.recall));
            prop_assert!(c.f1 >= lo - 1e-12 && c.f1 <= hi + 1e-12);
        }
    }
}

#[test]
fn precision_from_counts() {
    let mut m = ConfusionMatrix::zeros(Taxonomy::Merged);
    m.counts[0][0] = 8;
    m.counts[1][0] = 2;
    let c = precision_recall_f1(&m);
    assert!((c[0].precision - 0.8).abs() < 1e-15);
    assert_eq!(c[0].recall, 1.0);
}

#[test]
fn f1_of_published_normal_class() {
    assert!((f1_score(0.80, 0.81) - 0.80).abs() < 0.005);
}

#[test]
fn empty_class_scores_zero() {
    let m = confusion_matrix(&[N, N], &[N, V], Taxonomy::Merged).unwrap();
    let c = precision_recall_f1(&m);
    let s = &c[2];
    assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    assert_eq!((c[1].precision, c[1].recall, c[1].f1), (0.0, 0.0, 0.0));
}

#[test]
fn report_formats() {
    let report = MetricsReport::from_predictions(&[N, V, E], &[N, N, Q]).unwrap();
    let csv = format_metrics_csv(&report);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[1], "N,1,0.5,0.6666666666666666");
    let text = format_confusion(&report);
    assert!(text
        .lines()
        .last()
        .unwrap()
        .starts_with("accuracy 0.6666666666666666 (2/3)"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn sweep_csv_sorted_descending() {
    let rows: Vec<(f64, f64)> = DEFAULT_TAUS.iter().rev().map(|&t| (t, t / 2.0)).collect();
    let csv = format_sweep_csv(&rows);
    let taus: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(taus, DEFAULT_TAUS.to_vec());
    assert_eq!(format_sweep_csv(&[(0.5, 0.9)]).lines().count(), 2);
}

/// Beats whose class is the position of a single Gaussian bump.
fn separable_corpus(patients: usize, per_class: usize) -> Vec<LabeledBeat> {
    let mut rng = SeedStream::new(3).rng("sep");
    let mut out = Vec::new();
    for p in 0..patients {
        for (c, &l) in Label::ALL.iter().enumerate() {
            for _ in 0..per_class {
                let centre = 25.0 + 40.0 * c as f64 + rng.random_range(-3.0..3.0);
                let values = (0..250)
                    .map(|t| (-((t as f64 - centre) / 6.0).powi(2)).exp() - 0.5)
                    .collect();
                out.push(LabeledBeat::new(values, l, format!("p{p}")));
            }
        }
    }
    out
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 4,
        network: NetworkSpec::with_width(6, 4, 5, 0.0),
        ..Default::default()
    };
    cfg.noise.rate = 0.0;
    cfg.train.epochs = 6;
    cfg.train.batch_size = 16;
    cfg.eval.test_patients = 2;
    cfg.eval.val_patients = 1;
    cfg.eval.folds = 3;
    cfg.resolved()
}

#[test]
fn folds_are_disjoint_and_deterministic() {
    let beats = separable_corpus(6, 1);
    let cfg = small_config();
    let folds = fold_assignments(&cfg, &beats).unwrap();
    assert_eq!(folds, fold_assignments(&cfg, &beats).unwrap());
    assert_eq!(folds.len(), 3);
    let mut all: Vec<&String> = folds.iter().flatten().collect();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 6);
    for held in &folds {
        let s = make_splits(&cfg, &beats, Some(held)).unwrap();
        for b in s.train.iter().chain(&s.val) {
            assert!(!held.contains(&b.patient_id));
        }
        assert!(s.test.iter().all(|b| held.contains(&b.patient_id)));
        assert!(s
            .train
            .iter()
            .all(|t| s.val.iter().all(|v| v.patient_id != t.patient_id)));
    }
}

#[test]
fn too_few_patients_is_data_error() {
    let beats = separable_corpus(2, 1);
    assert!(matches!(fold_assignments(&small_config(), &beats), Err(Error::Data(_))));
    let mut cfg = small_config();
    cfg.eval.folds = 4;
    let beats = separable_corpus(6, 1);
    assert!(matches!(fold_assignments(&cfg, &beats), Err(Error::Data(_))));
}

#[test]
fn separable_corpus_crossvalidates_near_perfectly() {
    let beats = separable_corpus(6, 12);
    let cv = crossvalidate(&small_config(), &beats).unwrap();
    assert_eq!(cv.folds.len(), 3);
    assert!(cv.mean_accuracy >= 0.99, "mean accuracy {}", cv.mean_accuracy);
    assert_eq!(cv.mean_per_class.len(), 5);
}

#[test]
fn sweep_has_one_sorted_row_per_tau() {
    let beats = separable_corpus(6, 4);
    let mut cfg = small_config();
    cfg.train.epochs = 3;
    cfg.train.routing.warmup_epochs = 1;
    let rows = confidence_sweep(&cfg, &beats, &[0.3, 0.9, 0.5]).unwrap();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0.9, 0.5, 0.3]);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.1)));
    assert_eq!(confidence_sweep(&cfg, &beats, &[0.8]).unwrap().len(), 1);
}
