//! Labeled beat corpora: balancing, patient-wise splits and controlled
//! label noise.

mod corpus;

pub use corpus::{
    format_corpus_csv, format_unlabeled_csv, generate_corpus, parse_corpus_csv, read_corpus, write_corpus, CorpusSpec,
    CORPUS_HEADER_PREFIX,
};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{Label, Taxonomy};
use crate::rng::SeedStream;
use crate::signal::BeatSegment;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBeat {
    pub segment: BeatSegment,
    /// Label used for training; possibly corrupted.
    pub given_label: Label,
    /// Ground truth where known (synthetic data).
    pub clean_label: Option<Label>,
    pub patient_id: String,
}

impl LabeledBeat {
    pub fn new(values: Vec<f64>, label: Label, patient_id: impl Into<String>) -> Self {
        Self {
            segment: BeatSegment { values, r_index: 0 },
            given_label: label,
            clean_label: Some(label),
            patient_id: patient_id.into(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.segment.values
    }

    /// True when the given label is known to disagree with the ground truth.
    pub fn is_mislabeled(&self) -> bool {
        self.clean_label.is_some_and(|c| c != self.given_label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Flip to a uniformly chosen different label.
    #[default]
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Flip probability per eligible beat, in [0, 1].
    pub rate: f64,
    pub mode: NoiseMode,
    pub seed: u64,
    pub exempt_labels: Vec<Label>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            rate: 0.0,
            mode: NoiseMode::Symmetric,
            seed: 0,
            exempt_labels: vec![Label::A],
        }
    }
}

impl NoiseSpec {
    pub fn symmetric(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::config(format!(
                "noise rate must lie in [0, 1], got {}",
                self.rate
            )));
        }
        Ok(())
    }
}

/// Realized outcome of a noise injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NoiseReport {
    pub total: usize,
    /// Beats whose clean label is not exempt.
    pub eligible: usize,
    pub flipped: usize,
}

impl NoiseReport {
    /// Flipped share of eligible beats.
    pub fn flip_fraction(&self) -> f64 {
        if self.eligible == 0 {
            0.0
        } else {
            self.flipped as f64 / self.eligible as f64
        }
    }
}

/// Indices that undersample every class in `classes` to the smallest
/// class count, shuffled by `rng`.
pub fn balance_indices<R: Rng + ?Sized>(labels: &[Label], classes: &[Label], rng: &mut R) -> Result<Vec<usize>> {
    let mut by_class: BTreeMap<Label, Vec<usize>> = classes.iter().map(|&c| (c, Vec::new())).collect();
    for (i, l) in labels.iter().enumerate() {
        match by_class.get_mut(l) {
            Some(v) => v.push(i),
            None => return Err(Error::data(format!("label {l} is outside the class set"))),
        }
    }
    if let Some(missing) = classes.iter().find(|c| by_class[c].is_empty()) {
        return Err(Error::data(format!("class {missing} has no beats")));
    }
    let min = by_class.values().map(Vec::len).min().unwrap_or(0);
    let mut out = Vec::with_capacity(min * classes.len());
    // Visit classes in the caller's order so the draw is independent of Ord.
    for c in classes {
        let idx = by_class.get_mut(c).expect("class present");
        let (chosen, _) = idx.partial_shuffle(rng, min);
        out.extend_from_slice(chosen);
    }
    out.shuffle(rng);
    Ok(out)
}

/// Undersamples to equal per-class counts over the taxonomy's labels,
/// keyed on `given_label`.
pub fn balance_classes<R: Rng + ?Sized>(
    beats: &[LabeledBeat],
    taxonomy: Taxonomy,
    rng: &mut R,
) -> Result<Vec<LabeledBeat>> {
    let labels: Vec<Label> = beats.iter().map(|b| b.given_label).collect();
    let idx = balance_indices(&labels, taxonomy.labels(), rng)?;
    Ok(idx.into_iter().map(|i| beats[i].clone()).collect())
}

/// Symmetric label noise. Every beat's clean label is filled from its given
/// label when absent, then each non-exempt beat is relabeled with
/// probability `rate` to one of the other taxonomy labels, uniformly.
pub fn inject_label_noise(
    beats: &[LabeledBeat],
    spec: &NoiseSpec,
    taxonomy: Taxonomy,
) -> Result<(Vec<LabeledBeat>, NoiseReport)> {
    spec.validate()?;
    let classes = taxonomy.labels();
    let mut rng = SeedStream::new(spec.seed).rng(crate::rng::NOISE);
    let mut report = NoiseReport {
        total: beats.len(),
        ..NoiseReport::default()
    };
    let mut out = Vec::with_capacity(beats.len());
    for b in beats {
        let mut b = b.clone();
        let clean = *b.clean_label.get_or_insert(b.given_label);
        if !classes.contains(&clean) {
            return Err(Error::data(format!("label {clean} is outside the taxonomy")));
        }
        if !spec.exempt_labels.contains(&clean) {
            report.eligible += 1;
            // Both draws happen for every eligible beat so the stream layout
            // does not depend on earlier outcomes.
            let flip = rng.random::<f64>() < spec.rate;
            let pick = rng.random_range(0..classes.len() - 1);
            if flip {
                let others: Vec<Label> = classes.iter().copied().filter(|&l| l != clean).collect();
                b.given_label = others[pick];
                report.flipped += 1;
            } else {
                b.given_label = clean;
            }
        }
        out.push(b);
    }
    Ok((out, report))
}

/// Holds out every beat of `holdout_patients` randomly chosen patients.
/// Returns `(train, holdout)`, each in input order.
pub fn split_by_patient<R: Rng + ?Sized>(
    beats: &[LabeledBeat],
    holdout_patients: usize,
    rng: &mut R,
) -> Result<(Vec<LabeledBeat>, Vec<LabeledBeat>)> {
    let patients: Vec<&str> = beats
        .iter()
        .map(|b| b.patient_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if holdout_patients > 0 && patients.len() <= holdout_patients {
        return Err(Error::data(format!(
            "cannot hold out {holdout_patients} of {} patients",
            patients.len()
        )));
    }
    let mut order = patients;
    let (held, _) = order.partial_shuffle(rng, holdout_patients);
    let held: BTreeSet<&str> = held.iter().copied().collect();
    let (holdout, train): (Vec<_>, Vec<_>) = beats
        .iter()
        .cloned()
        .partition(|b| held.contains(b.patient_id.as_str()));
    Ok((train, holdout))
}

/// Distinct patient ids in sorted order.
pub fn patients(beats: &[LabeledBeat]) -> Vec<String> {
    beats
        .iter()
        .map(|b| b.patient_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Beats per given label, over the taxonomy's labels.
pub fn class_counts(beats: &[LabeledBeat], taxonomy: Taxonomy) -> Vec<(Label, usize)> {
    taxonomy
        .labels()
        .iter()
        .map(|&l| (l, beats.iter().filter(|b| taxonomy.project(b.given_label) == l).count()))
        .collect()
}
