//! End-to-end experiment: corpus → patient splits → label noise → training
//! → clean-label test report.
//!
//! The configuration is one JSON document; every field has a default, so
//! `{}` is a valid file.
//!
//! ```json
//! {
//!   "seed": 1,
//!   "paths": { "corpus": "corpus.csv", "out": "runs/a", "checkpoint": null },
//!   "corpus": { "classes": ["N","V","S","A","E","Q"], "beats_per_class": 2000,
//!               "patients": 12, "synth": { ... } },
//!   "noise": { "rate": 0.3, "mode": "symmetric", "exempt_labels": ["A"] },
//!   "network": { ... },
//!   "train": { "epochs": 30, "batch_size": 32, "alpha": 0.01, "momentum": 0.9,
//!              "routing": { "tau": 0.8, "per_class_tau": { "A": 0.5 },
//!                           "warmup_epochs": 2 },
//!              "pl_weight": 1.0, "nl_weight": 1.0, "taxonomy": "full" },
//!   "eval": { "test_patients": 2, "val_patients": 2, "folds": 3,
//!             "taus": [0.99, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3],
//!             "precision": "f32" }
//! }
//! ```
//!
//! `seed` is the root of every random stream. The seeds stored inside the
//! component sections are overwritten by [`ExperimentConfig::resolved`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{inject_label_noise, split_by_patient, CorpusSpec, LabeledBeat, NoiseReport, NoiseSpec};
use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;
use crate::label::{Label, Taxonomy};
use crate::model::{Network, NetworkSpec};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::training::{predict_indices, train_with, EpochRecord, TrainConfig, TrainOutcome};

/// Filters of the desk-scale network used by default.
pub const SURROGATE_FILTERS: usize = 8;

/// Thresholds of the default sweep, highest first.
pub const DEFAULT_TAUS: [f64; 8] = [0.99, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Labeled corpus CSV; generated from `corpus` when absent.
    pub corpus: Option<PathBuf>,
    /// Report directory.
    pub out: Option<PathBuf>,
    /// Checkpoint directory.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Patients held out for the clean-label test set.
    pub test_patients: usize,
    /// Patients held out from training for model selection.
    pub val_patients: usize,
    /// Cross-validation rounds, each with `test_patients` fresh patients.
    pub folds: usize,
    pub taus: Vec<f64>,
    pub precision: Precision,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            test_patients: 2,
            val_patients: 2,
            folds: 3,
            taus: DEFAULT_TAUS.to_vec(),
            precision: Precision::F32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub corpus: CorpusSpec,
    pub noise: NoiseSpec,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let corpus = CorpusSpec::default();
        Self {
            seed: 0,
            paths: Paths::default(),
            network: NetworkSpec::with_width(
                corpus.classes.len(),
                SURROGATE_FILTERS,
                crate::model::DEFAULT_KERNEL,
                crate::model::DEFAULT_DROPOUT,
            ),
            corpus,
            noise: NoiseSpec::symmetric(0.3, 0),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Copy with every component seed derived from `seed`.
    pub fn resolved(&self) -> Self {
        let s = SeedStream::new(self.seed);
        let mut c = self.clone();
        c.corpus.synth.seed = s.seed(crate::rng::DATA);
        c.noise.seed = s.seed(crate::rng::NOISE);
        c.train.seed = s.seed("train");
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.synth.validate()?;
        self.noise.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        if self.network.n_classes != self.train.taxonomy.len() {
            return Err(Error::config(format!(
                "network has {} outputs, taxonomy {:?} has {} labels",
                self.network.n_classes,
                self.train.taxonomy,
                self.train.taxonomy.len()
            )));
        }
        if let Some(t) = self.eval.taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::config(format!("sweep tau {t} outside (0, 1)")));
        }
        Ok(())
    }

    pub fn split_seeds(&self) -> SeedStream {
        SeedStream::new(self.seed).child(crate::rng::SPLIT, 0)
    }
}

/// Train/validation/test beats of one run. Training and validation labels
/// carry injected noise; test beats keep their clean labels.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<LabeledBeat>,
    pub val: Vec<LabeledBeat>,
    pub test: Vec<LabeledBeat>,
    pub noise: NoiseReport,
}

/// Holds out `test` patients, then `val` patients, then corrupts the
/// labels of what is left for training and validation.
pub fn make_splits(cfg: &ExperimentConfig, beats: &[LabeledBeat], test_holdout: Option<&[String]>) -> Result<Splits> {
    let seeds = cfg.split_seeds();
    let (rest, test) = match test_holdout {
        Some(ids) => beats.iter().cloned().partition(|b| !ids.contains(&b.patient_id)),
        None => split_by_patient(beats, cfg.eval.test_patients, &mut seeds.rng("test"))?,
    };
    let (train, val) = split_by_patient(&rest, cfg.eval.val_patients, &mut seeds.rng("val"))?;
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::data(format!(
            "split left {} train, {} validation and {} test beats",
            train.len(),
            val.len(),
            test.len()
        )));
    }
    let tax = cfg.train.taxonomy;
    let (train, noise) = inject_label_noise(&train, &cfg.noise, tax)?;
    let val_noise = NoiseSpec {
        seed: SeedStream::new(cfg.noise.seed).seed("val"),
        ..cfg.noise.clone()
    };
    let (val, _) = inject_label_noise(&val, &val_noise, tax)?;
    Ok(Splits {
        train,
        val,
        test,
        noise,
    })
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: TrainOutcome,
    /// Best-validation model on the clean test labels, merged view.
    pub test: MetricsReport,
    pub noise: NoiseReport,
    pub checkpoint: crate::autodiff::Checkpoint,
}

impl RunResult {
    pub fn history(&self) -> &[EpochRecord] {
        &self.outcome.history
    }
}

pub fn build_model<T: Scalar>(cfg: &ExperimentConfig) -> Result<Network<T>> {
    Network::build(&cfg.network, &mut SeedStream::new(cfg.train.seed).rng(crate::rng::INIT))
}

/// Model predictions in the merged view against clean labels.
pub fn test_report<T: Scalar>(model: &Network<T>, test: &[LabeledBeat], taxonomy: Taxonomy) -> Result<MetricsReport> {
    let preds = predict_indices(model, test)?
        .into_iter()
        .map(|i| taxonomy.label(i))
        .collect::<Result<Vec<Label>>>()?;
    let truths: Vec<Label> = test.iter().map(|b| b.clean_label.unwrap_or(b.given_label)).collect();
    MetricsReport::from_predictions(&preds, &truths)
}

fn run_typed<T: Scalar>(
    cfg: &ExperimentConfig,
    splits: &Splits,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<RunResult> {
    let mut model = build_model::<T>(cfg)?;
    let outcome = train_with(&mut model, &splits.train, &splits.val, &cfg.train, on_epoch)?;
    model.load_checkpoint(&outcome.best)?;
    Ok(RunResult {
        test: test_report(&model, &splits.test, cfg.train.taxonomy)?,
        noise: splits.noise,
        checkpoint: outcome.best.clone(),
        outcome,
    })
}

/// Trains on prepared splits in the configured precision and tests the
/// weights of the best validation epoch.
pub fn run_on_splits(
    cfg: &ExperimentConfig,
    splits: &Splits,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<RunResult> {
    cfg.validate()?;
    match cfg.eval.precision {
        Precision::F32 => run_typed::<f32>(cfg, splits, on_epoch),
        Precision::F64 => run_typed::<f64>(cfg, splits, on_epoch),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, beats: &[LabeledBeat]) -> Result<RunResult> {
    let splits = make_splits(cfg, beats, None)?;
    run_on_splits(cfg, &splits, &mut |_| {})
}
