use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{
    BatchStats, Checkpoint, CheckpointEntry, EntryKind, Mode, ParamId, ParamStore, RunningStats, Tape, Tensor, Var,
    BN_EPSILON, BN_MOMENTUM,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::spec::{NetworkSpec, ResidualBlockSpec};

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
    padding: usize,
}

impl Conv {
    fn build<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = fan_in_uniform(&[cout, cin, k], cin * k, rng);
        Ok(Self {
            w: store.add(format!("{name}.weight"), w)?,
            b: store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
            padding: k / 2,
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv1d(x, w, b, 1, self.padding)
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    /// Index into the owner's running-stats table.
    stats: usize,
}

impl Norm {
    fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        running: &mut Vec<(String, RunningStats<T>)>,
        name: &str,
        channels: usize,
        gamma: f64,
    ) -> Result<Self> {
        running.push((name.to_string(), RunningStats::new(channels)));
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::of(gamma)))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            stats: running.len() - 1,
        })
    }

    fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        running: &[(String, RunningStats<T>)],
        x: Var,
        mode: Mode,
        collected: &mut Vec<(usize, BatchStats<T>)>,
    ) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let (y, stats) = tape.batchnorm1d(x, g, b, &running[self.stats].1, mode, BN_EPSILON)?;
        if let Some(s) = stats {
            collected.push((self.stats, s));
        }
        Ok(y)
    }
}

fn fan_in_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Running batch-norm statistics gathered by one training forward pass.
#[derive(Debug, Clone, Default)]
pub struct CollectedStats<T> {
    entries: Vec<(usize, BatchStats<T>)>,
}

/// Parameter handles of one residual block. The block's parameters and
/// running statistics live in a caller-owned store and table.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub spec: ResidualBlockSpec,
    conv1: Conv,
    bn1: Norm,
    conv2: Conv,
    bn2: Norm,
    proj: Option<Conv>,
}

impl ResidualBlock {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        spec: ResidualBlockSpec,
        name: &str,
        store: &mut ParamStore<T>,
        running: &mut Vec<(String, RunningStats<T>)>,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let (ci, co, k) = (spec.channels_in, spec.channels_out, spec.kernel_size);
        let conv1 = Conv::build(store, &format!("{name}.conv1"), ci, co, k, rng)?;
        let bn1 = Norm::build(store, running, &format!("{name}.bn1"), co, 1.0)?;
        let conv2 = Conv::build(store, &format!("{name}.conv2"), co, co, k, rng)?;
        // Zero gamma: the block starts out as its shortcut.
        let bn2 = Norm::build(store, running, &format!("{name}.bn2"), co, 0.0)?;
        let proj = if spec.needs_projection() {
            Some(Conv::build(store, &format!("{name}.proj"), ci, co, 1, rng)?)
        } else {
            None
        };
        Ok(Self {
            spec,
            conv1,
            bn1,
            conv2,
            bn2,
            proj,
        })
    }

    /// `relu(F(x) + shortcut(x))`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        running: &[(String, RunningStats<T>)],
        x: Var,
        mode: Mode,
        rng: &mut R,
        stats: &mut CollectedStats<T>,
    ) -> Result<Var> {
        let (_, c, _) = tape.value(x).dims3()?;
        if c != self.spec.channels_in {
            return Err(Error::dim(format!(
                "block expects {} channels, input has {c}",
                self.spec.channels_in
            )));
        }
        let col = &mut stats.entries;
        let h = self.conv1.forward(tape, store, x)?;
        let h = self.bn1.forward(tape, store, running, h, mode, col)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, self.spec.dropout_rate, mode, rng)?;
        let h = self.conv2.forward(tape, store, h)?;
        let mut f = self.bn2.forward(tape, store, running, h, mode, col)?;
        let mut s = x;
        if self.spec.subsample {
            f = tape.maxpool1d(f, 2, 2)?;
            s = tape.maxpool1d(s, 2, 2)?;
        }
        if let Some(p) = &self.proj {
            s = p.forward(tape, store, s)?;
        }
        let y = tape.add(f, s)?;
        Ok(tape.relu(y))
    }

    /// Names of the parameters this block created.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![
            self.conv1.w,
            self.conv1.b,
            self.bn1.gamma,
            self.bn1.beta,
            self.conv2.w,
            self.conv2.b,
            self.bn2.gamma,
            self.bn2.beta,
        ];
        if let Some(p) = &self.proj {
            v.extend([p.w, p.b]);
        }
        v
    }

    pub fn residual_param_ids(&self) -> Vec<ParamId> {
        vec![self.conv1.w, self.conv1.b, self.conv2.w, self.conv2.b]
    }

    pub fn last_gamma(&self) -> ParamId {
        self.bn2.gamma
    }
}

/// Result of [`Network::forward`].
pub struct Forward<T> {
    /// `[batch, n_classes]` softmax output.
    pub probs: Var,
    pub logits: Var,
    pub stats: CollectedStats<T>,
}

/// Negative-ResNet backbone: stem conv → 5 residual blocks → 1×1 conv →
/// flatten → dense → softmax.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    pub params: ParamStore<T>,
    running: Vec<(String, RunningStats<T>)>,
    stem: Conv,
    stem_bn: Norm,
    blocks: Vec<ResidualBlock>,
    head_conv: Conv,
    head_bn: Norm,
    dense_w: ParamId,
    dense_b: ParamId,
}

impl<T: Scalar> Network<T> {
    pub fn build<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut running = Vec::new();
        let s = spec.stem;
        let stem = Conv::build(&mut params, "stem.conv", 1, s.channels, s.kernel_size, rng)?;
        let stem_bn = Norm::build(&mut params, &mut running, "stem.bn", s.channels, 1.0)?;
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        for (i, b) in spec.blocks.iter().enumerate() {
            let name = format!("block{}", i + 1);
            blocks.push(ResidualBlock::build(*b, &name, &mut params, &mut running, rng)?);
        }
        let last = spec.blocks.last().map_or(s.channels, |b| b.channels_out);
        let h = spec.head.channels;
        let head_conv = Conv::build(&mut params, "head.conv", last, h, 1, rng)?;
        let head_bn = Norm::build(&mut params, &mut running, "head.bn", h, 1.0)?;
        let features = spec.flat_features();
        let dense_w = params.add(
            "head.dense.weight",
            fan_in_uniform(&[spec.n_classes, features], features, rng),
        )?;
        let dense_b = params.add("head.dense.bias", Tensor::zeros(&[spec.n_classes]))?;
        Ok(Self {
            spec: spec.clone(),
            params,
            running,
            stem,
            stem_bn,
            blocks,
            head_conv,
            head_bn,
            dense_w,
            dense_b,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.dense_w, self.dense_b)
    }

    pub fn running_stats(&self) -> &[(String, RunningStats<T>)] {
        &self.running
    }

    /// Records the forward pass of `x: [batch, 1, input_length]` on `tape`.
    /// In training mode the batch statistics come back in
    /// [`Forward::stats`]; nothing is mutated here.
    pub fn forward<R: Rng + ?Sized>(&self, tape: &mut Tape<T>, x: Var, mode: Mode, rng: &mut R) -> Result<Forward<T>> {
        let (_, c, len) = tape.value(x).dims3()?;
        if c != 1 || len != self.spec.input_length {
            return Err(Error::dim(format!(
                "network expects [batch, 1, {}], got [_, {c}, {len}]",
                self.spec.input_length
            )));
        }
        let mut stats = CollectedStats { entries: Vec::new() };
        let p = &self.params;
        let r = &self.running;
        let h = self.stem.forward(tape, p, x)?;
        let h = self.stem_bn.forward(tape, p, r, h, mode, &mut stats.entries)?;
        let mut h = tape.relu(h);
        for b in &self.blocks {
            h = b.forward(tape, p, r, h, mode, rng, &mut stats)?;
        }
        let h = self.head_conv.forward(tape, p, h)?;
        let h = self.head_bn.forward(tape, p, r, h, mode, &mut stats.entries)?;
        let h = tape.relu(h);
        let h = tape.flatten(h)?;
        let w = tape.param(p, self.dense_w);
        let b = tape.param(p, self.dense_b);
        let logits = tape.dense(h, w, b)?;
        let probs = tape.softmax(logits)?;
        Ok(Forward { probs, logits, stats })
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_stats(&mut self, stats: CollectedStats<T>) {
        for (i, s) in stats.entries {
            self.running[i].1.update(&s, BN_MOMENTUM);
        }
    }

    /// Eval-mode class probabilities for `x: [batch, 1, input_length]`.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let v = tape.leaf(x.clone().with_requires_grad(false));
        let mut unused = crate::rng::SeedStream::new(0).rng(crate::rng::DROPOUT);
        let f = self.forward(&mut tape, v, Mode::Eval, &mut unused)?;
        Ok(tape.value(f.probs).clone())
    }

    /// Eval-mode probabilities for many segments, `chunk` at a time;
    /// returns one row per segment.
    pub fn predict_rows(&self, segments: &[&[f64]], chunk: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.spec.n_classes;
        let mut out = Vec::with_capacity(segments.len());
        for part in segments.chunks(chunk.max(1)) {
            let x = batch_tensor::<T>(part, self.spec.input_length)?;
            let p = self.predict_proba(&x)?;
            out.extend(p.data().chunks(n).map(|r| r.iter().map(|v| v.as_f64()).collect()));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut entries: Vec<CheckpointEntry> = self
            .params
            .iter()
            .map(|p| CheckpointEntry {
                name: p.name.clone(),
                kind: EntryKind::Parameter,
                shape: p.tensor.shape().to_vec(),
                values: p.tensor.to_f64_vec(),
            })
            .collect();
        for (name, s) in &self.running {
            for (suffix, v) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                entries.push(CheckpointEntry {
                    name: format!("{name}.{suffix}"),
                    kind: EntryKind::Buffer,
                    shape: vec![v.len()],
                    values: v.iter().map(|x| x.as_f64()).collect(),
                });
            }
        }
        Ok(Checkpoint {
            network: Some(serde_json::to_value(&self.spec)?),
            entries,
        })
    }

    /// Overwrites parameters and buffers from `ckpt`, which must describe
    /// the same architecture.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if let Some(net) = &ckpt.network {
            let stored: NetworkSpec = serde_json::from_value(net.clone())?;
            if stored != self.spec {
                return Err(Error::Checkpoint(
                    "checkpoint was saved from a different network".into(),
                ));
            }
        }
        let find = |name: &str, kind: EntryKind, shape: &[usize]| -> Result<Vec<f64>> {
            let e = ckpt
                .entry(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if e.kind != kind || e.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    e.shape
                )));
            }
            Ok(e.values.clone())
        };
        for p in self.params.iter_mut() {
            let v = find(&p.name, EntryKind::Parameter, p.tensor.shape())?;
            for (d, s) in p.tensor.data_mut().iter_mut().zip(v) {
                *d = T::of(s);
            }
        }
        for (name, s) in &mut self.running {
            let c = s.mean.len();
            let m = find(&format!("{name}.running_mean"), EntryKind::Buffer, &[c])?;
            let v = find(&format!("{name}.running_var"), EntryKind::Buffer, &[c])?;
            s.mean = m.into_iter().map(T::of).collect();
            s.var = v.into_iter().map(T::of).collect();
        }
        let expected = self.params.len() + 2 * self.running.len();
        if ckpt.entries.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, network has {expected}",
                ckpt.entries.len()
            )));
        }
        Ok(())
    }

    /// Rebuilds a network from the architecture stored in `ckpt`.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let net = ckpt
            .network
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no network description".into()))?;
        let spec: NetworkSpec = serde_json::from_value(net.clone())?;
        let mut rng = crate::rng::SeedStream::new(0).rng(crate::rng::INIT);
        let mut model = Self::build(&spec, &mut rng)?;
        model.load_checkpoint(ckpt)?;
        Ok(model)
    }
}

/// Stacks equal-length segments into `[batch, 1, len]`.
pub fn batch_tensor<T: Scalar>(segments: &[&[f64]], len: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(segments.len() * len);
    for s in segments {
        if s.len() != len {
            return Err(Error::dim(format!("segment of length {}, expected {len}", s.len())));
        }
        data.extend(s.iter().map(|&v| T::of(v)));
    }
    Tensor::new(vec![segments.len(), 1, len], data)
}

/// `(argmax, max)` of a probability row; ties go to the lowest index.
pub fn confidence(row: &[f64]) -> (usize, f64) {
    row.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
    )
}
