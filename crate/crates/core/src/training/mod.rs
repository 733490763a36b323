//! Confidence-routed training. Each batch is split by the model's own
//! probability at the given label: confident samples are trained positively
//! on that label, the rest negatively on a random complementary label.
//!
//! Negative learning is implemented as the loss `-ln(1 - p_y')` rather than
//! by reverting the output activation. For softmax outputs the two give the
//! same gradient with respect to the logits, `p_k·p_y'/(1 - p_y')` for
//! `k != y'` and `-p_y'` at `y'`, and the loss form is unambiguous.

mod history;

pub use history::{format_history_csv, write_history, EpochRecord, HISTORY_HEADER};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{log_loss, Checkpoint, LossKind, Mode, Sgd, Tape, Tensor, Var};
use crate::dataset::LabeledBeat;
use crate::error::{Error, Result};
use crate::label::{Label, Taxonomy};
use crate::model::{batch_tensor, Network};
use crate::rng::SeedStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingPolicy {
    /// A sample is clean when its probability at the given label is at
    /// least this.
    pub tau: f64,
    /// Label-specific overrides of `tau`.
    pub per_class_tau: BTreeMap<Label, f64>,
    /// Epochs of plain positive training before routing starts.
    pub warmup_epochs: usize,
}

impl Default for RoutingPolicy {
    fn default() -> Self {
        Self {
            tau: 0.8,
            per_class_tau: BTreeMap::from([(Label::A, 0.5)]),
            warmup_epochs: 2,
        }
    }
}

impl RoutingPolicy {
    pub fn with_tau(tau: f64) -> Self {
        Self { tau, ..Self::default() }
    }

    pub fn threshold(&self, label: Label) -> f64 {
        self.per_class_tau.get(&label).copied().unwrap_or(self.tau)
    }

    pub fn validate(&self) -> Result<()> {
        let open = |t: f64| t > 0.0 && t < 1.0;
        if !open(self.tau) {
            return Err(Error::config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if let Some((l, t)) = self.per_class_tau.iter().find(|(_, &t)| !open(t)) {
            return Err(Error::config(format!("threshold for {l} must lie in (0, 1), got {t}")));
        }
        Ok(())
    }
}

/// A label the sample is asserted *not* to have.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplementaryLabel {
    pub y_prime: Label,
    pub source_label: Label,
}

/// Uniform draw from `0..n` without `source`.
pub fn complementary_index<R: Rng + ?Sized>(source: usize, n: usize, rng: &mut R) -> Result<usize> {
    if n < 2 {
        return Err(Error::config(format!(
            "complementary labels need >= 2 classes, got {n}"
        )));
    }
    if source >= n {
        return Err(Error::data(format!("class index {source} outside 0..{n}")));
    }
    let pick = rng.random_range(0..n - 1);
    Ok(if pick >= source { pick + 1 } else { pick })
}

pub fn gen_complementary_label<R: Rng + ?Sized>(
    source: Label,
    taxonomy: Taxonomy,
    rng: &mut R,
) -> Result<ComplementaryLabel> {
    let i = complementary_index(taxonomy.index_of(source)?, taxonomy.len(), rng)?;
    Ok(ComplementaryLabel {
        y_prime: taxonomy.label(i)?,
        source_label: source,
    })
}

/// Indices of clean and noisy rows; row `i` is clean iff
/// `probs[i][given[i]] >= policy.threshold(given[i])`.
pub fn route_batch<T: Scalar>(
    probs: &Tensor<T>,
    given: &[Label],
    policy: &RoutingPolicy,
    taxonomy: Taxonomy,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let (batch, n) = probs.dims2()?;
    if given.len() != batch || n != taxonomy.len() {
        return Err(Error::dim(format!(
            "routing {} labels against probabilities [{batch}, {n}]",
            given.len()
        )));
    }
    let (mut clean, mut noisy) = (Vec::new(), Vec::new());
    for (i, &l) in given.iter().enumerate() {
        let p = probs.row(i)[taxonomy.index_of(l)?].as_f64();
        if p >= policy.threshold(l) {
            clean.push(i);
        } else {
            noisy.push(i);
        }
    }
    Ok((clean, noisy))
}

fn mean_loss<T: Scalar>(probs: &Tensor<T>, targets: &[usize], kind: LossKind) -> Result<f64> {
    let (batch, n) = probs.dims2()?;
    if targets.len() != batch {
        return Err(Error::dim(format!("{} targets for {batch} rows", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= n) {
        return Err(Error::dim(format!("target class {t} outside 0..{n}")));
    }
    if batch == 0 {
        return Ok(0.0);
    }
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| log_loss(probs.row(i)[t].as_f64(), kind))
        .sum();
    Ok(total / batch as f64)
}

/// Mean of `-ln p` at each row's target class.
pub fn positive_loss<T: Scalar>(probs: &Tensor<T>, targets: &[usize]) -> Result<f64> {
    mean_loss(probs, targets, LossKind::Positive)
}

/// Mean of `-ln(1 - p)` at each row's complementary class.
pub fn negative_loss<T: Scalar>(probs: &Tensor<T>, complementary: &[usize]) -> Result<f64> {
    mean_loss(probs, complementary, LossKind::Negative)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate.
    pub alpha: f64,
    pub momentum: f64,
    pub seed: u64,
    pub routing: RoutingPolicy,
    pub pl_weight: f64,
    pub nl_weight: f64,
    /// Class space of the model's outputs.
    pub taxonomy: Taxonomy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            alpha: 0.01,
            momentum: 0.9,
            seed: 0,
            routing: RoutingPolicy::default(),
            pl_weight: 1.0,
            nl_weight: 1.0,
            taxonomy: Taxonomy::Full,
        }
    }
}

impl TrainConfig {
    /// Pure positive learning: routing never starts.
    pub fn baseline(mut self) -> Self {
        self.routing.warmup_epochs = self.epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.batch_size < 2 {
            return Err(Error::config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if !(self.pl_weight >= 0.0 && self.nl_weight >= 0.0) {
            return Err(Error::config("loss weights must be >= 0"));
        }
        self.routing.validate()
    }
}

/// `(row, class)` targets of one step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepPlan {
    pub positive: Vec<(usize, usize)>,
    pub negative: Vec<(usize, usize)>,
}

/// Loss handles recorded by [`record_losses`].
#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub total: Var,
    pub pl: Var,
    pub nl: Var,
}

/// `w_pl·L_pl + w_nl·L_nl` on `tape`, each part averaged over its own rows.
pub fn record_losses<T: Scalar>(
    tape: &mut Tape<T>,
    probs: Var,
    plan: &StepPlan,
    pl_weight: f64,
    nl_weight: f64,
) -> Result<StepLosses> {
    let pl = tape.prob_loss(probs, plan.positive.clone(), LossKind::Positive)?;
    let nl = tape.prob_loss(probs, plan.negative.clone(), LossKind::Negative)?;
    let a = tape.scale(pl, T::of(pl_weight));
    let b = tape.scale(nl, T::of(nl_weight));
    let total = tape.add(a, b)?;
    Ok(StepLosses { total, pl, nl })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub pl_loss: f64,
    pub nl_loss: f64,
    /// Batch rows routed to negative learning.
    pub noisy: Vec<usize>,
    pub batch: usize,
}

/// Mutable state of a training run besides the model.
pub struct Trainer<T> {
    pub config: TrainConfig,
    opt: Sgd<T>,
    dropout: crate::rng::Rng,
    routing: crate::rng::Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let seeds = SeedStream::new(config.seed);
        Ok(Self {
            opt: Sgd::new(config.alpha, config.momentum)?,
            dropout: seeds.rng(crate::rng::DROPOUT),
            routing: seeds.rng(crate::rng::ROUTING),
            config,
        })
    }

    /// One forward pass, routing on the detached probabilities (skipped
    /// when `route` is false), one backward pass and one optimizer step.
    pub fn combined_step(&mut self, model: &mut Network<T>, batch: &[&LabeledBeat], route: bool) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::contract("combined_step on an empty batch"));
        }
        let tax = self.config.taxonomy;
        if model.n_classes() != tax.len() {
            return Err(Error::config(format!(
                "model has {} outputs, taxonomy {tax:?} has {} labels",
                model.n_classes(),
                tax.len()
            )));
        }
        let given: Vec<Label> = batch.iter().map(|b| b.given_label).collect();
        let targets = given.iter().map(|&l| tax.index_of(l)).collect::<Result<Vec<_>>>()?;
        let segs: Vec<&[f64]> = batch.iter().map(|b| b.values()).collect();
        let x = batch_tensor::<T>(&segs, model.spec().input_length)?;

        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let f = model.forward(&mut tape, xv, Mode::Train, &mut self.dropout)?;
        let (clean, noisy) = if route {
            route_batch(tape.value(f.probs), &given, &self.config.routing, tax)?
        } else {
            ((0..batch.len()).collect(), Vec::new())
        };
        let mut plan = StepPlan {
            positive: clean.iter().map(|&i| (i, targets[i])).collect(),
            negative: Vec::with_capacity(noisy.len()),
        };
        for &i in &noisy {
            plan.negative
                .push((i, complementary_index(targets[i], tax.len(), &mut self.routing)?));
        }
        let losses = record_losses(&mut tape, f.probs, &plan, self.config.pl_weight, self.config.nl_weight)?;
        model.params.zero_grad();
        tape.backward(losses.total, &mut model.params)?;
        self.opt.step(&mut model.params);
        model.apply_stats(f.stats);
        let item = |v: Var| tape.value(v).item().map(|x| x.as_f64());
        Ok(StepReport {
            loss: item(losses.total)?,
            pl_loss: item(losses.pl)?,
            nl_loss: item(losses.nl)?,
            noisy,
            batch: batch.len(),
        })
    }
}

/// Fraction of `beats` whose argmax matches the reference label: the clean
/// label when `clean` is set and known, the given label otherwise.
pub fn accuracy<T: Scalar>(model: &Network<T>, beats: &[LabeledBeat], taxonomy: Taxonomy, clean: bool) -> Result<f64> {
    if beats.is_empty() {
        return Ok(0.0);
    }
    let preds = predict_indices(model, beats)?;
    let mut hits = 0usize;
    for (b, p) in beats.iter().zip(preds) {
        let truth = if clean {
            b.clean_label.unwrap_or(b.given_label)
        } else {
            b.given_label
        };
        hits += usize::from(taxonomy.index_of(truth)? == p);
    }
    Ok(hits as f64 / beats.len() as f64)
}

/// Eval-mode argmax class index per beat.
pub fn predict_indices<T: Scalar>(model: &Network<T>, beats: &[LabeledBeat]) -> Result<Vec<usize>> {
    let segs: Vec<&[f64]> = beats.iter().map(|b| b.values()).collect();
    let rows = model.predict_rows(&segs, 256)?;
    Ok(rows.iter().map(|r| crate::model::confidence(r).0).collect())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) with the highest validation accuracy.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Weights at `best_epoch`.
    pub best: Checkpoint,
}

/// Trains `model` in place for `config.epochs` epochs and returns the
/// history. The model is left at its final weights; the best-validation
/// weights are kept in the outcome.
pub fn train<T: Scalar>(
    model: &mut Network<T>,
    train_set: &[LabeledBeat],
    val_set: &[LabeledBeat],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, train_set, val_set, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Scalar>(
    model: &mut Network<T>,
    train_set: &[LabeledBeat],
    val_set: &[LabeledBeat],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::data("training and validation sets must be nonempty"));
    }
    let tax = config.taxonomy;
    for b in train_set.iter().chain(val_set) {
        tax.index_of(b.given_label)?;
    }
    let mut trainer = Trainer::new(config.clone())?;
    let shuffle = SeedStream::new(config.seed).child(crate::rng::SHUFFLE, 0);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle.child("epoch", epoch as u64).rng(crate::rng::SHUFFLE));
        let route = epoch >= config.routing.warmup_epochs;
        let mut acc = EpochAccumulator::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LabeledBeat> = chunk.iter().map(|&i| &train_set[i]).collect();
            let r = trainer.combined_step(model, &batch, route)?;
            acc.add(&batch, &r);
        }
        let val_accuracy = accuracy(model, val_set, tax, false)?;
        let record = acc.finish(epoch + 1, val_accuracy);
        on_epoch(&record);
        if best.as_ref().is_none_or(|(_, a, _)| val_accuracy > *a) {
            best = Some((epoch + 1, val_accuracy, model.to_checkpoint()?));
        }
        history.push(record);
    }
    let (best_epoch, best_val_accuracy, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_accuracy,
        best,
    })
}

#[derive(Default)]
struct EpochAccumulator {
    samples: usize,
    loss: f64,
    pl: f64,
    nl: f64,
    noisy: usize,
    mislabeled: usize,
    mislabeled_noisy: usize,
    clean: usize,
    clean_noisy: usize,
}

impl EpochAccumulator {
    fn add(&mut self, batch: &[&LabeledBeat], r: &StepReport) {
        let n = r.batch as f64;
        self.samples += r.batch;
        self.loss += r.loss * n;
        self.pl += r.pl_loss * n;
        self.nl += r.nl_loss * n;
        self.noisy += r.noisy.len();
        let mut routed = vec![false; batch.len()];
        for &i in &r.noisy {
            routed[i] = true;
        }
        for (b, &nl) in batch.iter().zip(&routed) {
            if b.clean_label.is_none() {
                continue;
            }
            if b.is_mislabeled() {
                self.mislabeled += 1;
                self.mislabeled_noisy += usize::from(nl);
            } else {
                self.clean += 1;
                self.clean_noisy += usize::from(nl);
            }
        }
    }

    fn finish(self, epoch: usize, val_accuracy: f64) -> EpochRecord {
        let s = self.samples.max(1) as f64;
        let rate = |k: usize, n: usize| (n > 0).then(|| k as f64 / n as f64);
        EpochRecord {
            epoch,
            train_loss: self.loss / s,
            pl_loss: self.pl / s,
            nl_loss: self.nl / s,
            noisy_fraction: self.noisy as f64 / s,
            val_accuracy,
            nl_rate_mislabeled: rate(self.mislabeled_noisy, self.mislabeled),
            nl_rate_clean: rate(self.clean_noisy, self.clean),
        }
    }
}
