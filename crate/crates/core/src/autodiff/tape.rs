//! Define-by-run tape. Every op evaluates eagerly, records its inputs and
//! whatever it needs for the reverse pass, and returns a [`Var`] handle.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::kernels;
use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which side of a probability the log-loss penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `-ln p`: "the input is this class".
    Positive,
    /// `-ln (1 - p)`: "the input is not this class".
    Negative,
}

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

/// Per-channel running mean/variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    /// Exponential moving average; `momentum` is the weight kept on the old value.
    pub fn update(&mut self, batch: &BatchStats<T>, momentum: f64) {
        let m = T::of(momentum);
        let w = T::one() - m;
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = m * *r + w * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.unbiased_var) {
            *r = m * *r + w * b;
        }
    }
}

/// Statistics of one training-mode batch-norm evaluation.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub unbiased_var: Vec<T>,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Softmax {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    ProbLoss {
        probs: Var,
        picks: Vec<(usize, usize)>,
        kind: LossKind,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of the leaves that were marked `requires_grad`.
#[derive(Debug)]
pub struct LeafGrads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> LeafGrads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    track_params: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            track_params: true,
        }
    }

    /// A tape whose parameters are recorded as constants. Forward values are
    /// identical to [`Tape::new`]; nothing on it is differentiable.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            track_params: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Records an input. Its gradient is reported by [`Tape::backward`] iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let value = store.get(id).tensor.clone();
        if self.track_params {
            self.push(value, Op::Param(id), true)
        } else {
            self.push(value.with_requires_grad(false), Op::Leaf, false)
        }
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (batch, cin, len) = self.value(x).dims3()?;
        let (cout, wcin, k) = self.value(w).dims3()?;
        if wcin != cin {
            return Err(Error::dim(format!(
                "conv1d kernel expects {wcin} input channels, input has {cin}"
            )));
        }
        if self.value(b).shape() != [cout] {
            return Err(Error::dim(format!(
                "conv1d bias shape {:?}, expected [{cout}]",
                self.value(b).shape()
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv1d stride must be >= 1"));
        }
        if k > len + 2 * padding {
            return Err(Error::dim(format!(
                "conv1d kernel {k} longer than padded input {}",
                len + 2 * padding
            )));
        }
        let lout = (len + 2 * padding - k) / stride + 1;
        let geo = ConvGeometry {
            cin,
            len,
            k,
            stride,
            padding,
            lout,
        };
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(b).data();
        let ck = cin * k;
        let mut out = vec![T::zero(); batch * cout * lout];
        if let Some(d) = direct(&geo, cout) {
            kernels::forward(&d, batch, xs, ws, bs, &mut out);
        } else {
            let mut cols = Vec::new();
            for bi in 0..batch {
                let xb = &xs[bi * cin * len..(bi + 1) * cin * len];
                let cols_ref = geo.im2col(xb, &mut cols);
                let ob = &mut out[bi * cout * lout..(bi + 1) * cout * lout];
                for (co, row) in ob.chunks_exact_mut(lout).enumerate() {
                    row.fill(bs[co]);
                }
                let cols_ref: &[T] = cols_ref.unwrap_or(&cols);
                T::gemm(
                    cout,
                    ck,
                    lout,
                    T::one(),
                    ws,
                    (ck, 1),
                    cols_ref,
                    (lout, 1),
                    T::one(),
                    ob,
                    (lout, 1),
                );
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Tensor::new(vec![batch, cout, lout], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let (batch, c, len) = self.value(x).dims3()?;
        if window == 0 || stride == 0 {
            return Err(Error::config("maxpool1d window and stride must be >= 1"));
        }
        if window > len {
            return Err(Error::dim(format!("maxpool1d window {window} exceeds length {len}")));
        }
        let lout = (len - window) / stride + 1;
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(batch * c * lout);
        let mut argmax = Vec::with_capacity(batch * c * lout);
        for row in 0..batch * c {
            let base = row * len;
            for t in 0..lout {
                let start = base + t * stride;
                let mut best = start;
                for i in start + 1..start + window {
                    if xs[i] > xs[best] {
                        best = i;
                    }
                }
                out.push(xs[best]);
                argmax.push(best);
            }
        }
        let rg = self.rg(x);
        let value = Tensor::new(vec![batch, c, lout], out)?;
        Ok(self.push(value, Op::MaxPool1d { x, argmax }, rg))
    }

    /// Batch normalization over the batch and length axes of `[batch, C, L]`.
    ///
    /// In [`Mode::Train`] the batch statistics are used and returned so the
    /// caller can fold them into its running stats; in [`Mode::Eval`] the
    /// running stats are used and nothing is returned.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats<T>,
        mode: Mode,
        epsilon: f64,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (batch, c, len) = self.value(x).dims3()?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::dim(format!("batchnorm affine params must have shape [{c}]")));
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(Error::dim(format!("running stats must have {c} channels")));
        }
        let m = batch * len;
        if mode == Mode::Train && m < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch*length = {m}; batch statistics need at least 2 values"
            )));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let eps = T::of(epsilon);
        let mf = T::of(m as f64);

        let (mean, var, stats) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for bi in 0..batch {
                        let o = (bi * c + ch) * len;
                        s += xs[o..o + len].iter().copied().sum::<T>();
                    }
                    let mu = s / mf;
                    let mut ss = T::zero();
                    for bi in 0..batch {
                        let o = (bi * c + ch) * len;
                        for &v in &xs[o..o + len] {
                            let d = v - mu;
                            ss += d * d;
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = ss / mf;
                }
                let unbiased_var = var.iter().map(|&v| v * mf / (mf - T::one())).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    unbiased_var,
                };
                (mean, var, Some(stats))
            }
            Mode::Eval => (running.mean.clone(), running.var.clone(), None),
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for bi in 0..batch {
            for ch in 0..c {
                let o = (bi * c + ch) * len;
                for i in o..o + len {
                    let h = (xs[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let value = Tensor::new(vec![batch, c, len], out)?;
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
            rg,
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let out: Vec<T> = value
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = value.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Relu { x }, rg)
    }

    /// Inverted dropout. Identity in eval mode or at rate 0 (no node is
    /// recorded and no randomness consumed).
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let value = self.value(x);
        let mask: Vec<T> = (0..value.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out: Vec<T> = value.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = value.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Dropout { x, mask }, rg))
    }

    /// `x · wᵀ + b` for `x: [batch, d_in]`, `w: [d_out, d_in]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, din) = self.value(x).dims2()?;
        let (dout, wdin) = self.value(w).dims2()?;
        if wdin != din {
            return Err(Error::dim(format!("dense weight expects {wdin} inputs, got {din}")));
        }
        if self.value(b).shape() != [dout] {
            return Err(Error::dim(format!("dense bias must have shape [{dout}]")));
        }
        let bs = self.value(b).data();
        let mut out = Vec::with_capacity(batch * dout);
        for _ in 0..batch {
            out.extend_from_slice(bs);
        }
        T::gemm(
            batch,
            din,
            dout,
            T::one(),
            self.value(x).data(),
            (din, 1),
            self.value(w).data(),
            (1, din),
            T::one(),
            &mut out,
            (dout, 1),
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(vec![batch, dout], out)?, Op::Dense { x, w, b }, rg))
    }

    /// Row-wise softmax of `[batch, n]` logits, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (batch, n) = self.value(x).dims2()?;
        if n < 2 {
            return Err(Error::dim(format!("softmax needs at least 2 classes, got {n}")));
        }
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); batch * n];
        for r in 0..batch {
            let row = &xs[r * n..(r + 1) * n];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let o = &mut out[r * n..(r + 1) * n];
            let mut s = T::zero();
            for (oi, &v) in o.iter_mut().zip(row) {
                *oi = (v - mx).exp();
                s += *oi;
            }
            for oi in o.iter_mut() {
                *oi /= s;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![batch, n], out)?, Op::Softmax { x }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!(
                "add: shapes {:?} and {:?} differ",
                va.shape(),
                vb.shape()
            )));
        }
        let out: Vec<T> = va.data().iter().zip(vb.data()).map(|(&p, &q)| p + q).collect();
        let shape = va.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// `[batch, ...]` → `[batch, rest]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let batch = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(x, vec![batch, rest])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x);
        let out: Vec<T> = value.data().iter().map(|&v| v * factor).collect();
        let shape = value.shape().to_vec();
        let rg = self.rg(x);
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            Op::Scale { x, factor },
            rg,
        )
    }

    /// Mean over `picks = [(row, class)]` of `-ln p` (positive) or
    /// `-ln (1 - p)` (negative), with `p` clamped to `[1e-12, 1 - 1e-12]`.
    /// An empty pick list yields a constant zero.
    pub fn prob_loss(&mut self, probs: Var, picks: Vec<(usize, usize)>, kind: LossKind) -> Result<Var> {
        let (batch, n) = self.value(probs).dims2()?;
        if let Some(&(r, c)) = picks.iter().find(|&&(r, c)| r >= batch || c >= n) {
            return Err(Error::dim(format!(
                "loss pick ({r}, {c}) outside probabilities [{batch}, {n}]"
            )));
        }
        let ps = self.value(probs).data();
        let total: f64 = picks.iter().map(|&(r, c)| log_loss(ps[r * n + c].as_f64(), kind)).sum();
        let mean = if picks.is_empty() {
            0.0
        } else {
            total / picks.len() as f64
        };
        let rg = self.rg(probs) && !picks.is_empty();
        Ok(self.push(Tensor::scalar(T::of(mean)), Op::ProbLoss { probs, picks, kind }, rg))
    }

    /// Reverse pass from the scalar `loss`. Parameter gradients are added to
    /// `store` (accumulating across calls); gradients of `requires_grad`
    /// leaves are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<LeafGrads<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        let mut leaves: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        if !self.rg(loss) {
            return Ok(LeafGrads { grads: leaves });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => leaves[i] = Some(g),
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    if p.grad.len() != g.len() {
                        return Err(Error::dim(format!(
                            "parameter `{}` changed shape while on the tape",
                            p.name
                        )));
                    }
                    for (a, b) in p.grad.data_mut().iter_mut().zip(&g) {
                        *a += *b;
                    }
                }
                Op::Conv1d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => self.conv1d_backward(&mut grads, &g, *x, *w, *b, *stride, *padding)?,
                Op::MaxPool1d { x, argmax } => {
                    self.accumulate(&mut grads, *x, |gx| {
                        for (&src, &gv) in argmax.iter().zip(&g) {
                            gx[src] += gv;
                        }
                    });
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (batch, c, len) = node.value.dims3()?;
                    let gam = self.value(*gamma).data();
                    let mut sum_g = vec![T::zero(); c];
                    let mut sum_gx = vec![T::zero(); c];
                    for bi in 0..batch {
                        for ch in 0..c {
                            let o = (bi * c + ch) * len;
                            for j in o..o + len {
                                sum_g[ch] += g[j];
                                sum_gx[ch] += g[j] * xhat[j];
                            }
                        }
                    }
                    self.accumulate(&mut grads, *gamma, |gg| {
                        for (a, &s) in gg.iter_mut().zip(&sum_gx) {
                            *a += s;
                        }
                    });
                    self.accumulate(&mut grads, *beta, |gb| {
                        for (a, &s) in gb.iter_mut().zip(&sum_g) {
                            *a += s;
                        }
                    });
                    let m = T::of((batch * len) as f64);
                    self.accumulate(&mut grads, *x, |gx| {
                        for bi in 0..batch {
                            for ch in 0..c {
                                let o = (bi * c + ch) * len;
                                let scale = gam[ch] * inv_std[ch];
                                if *batch_stats {
                                    let mg = sum_g[ch] / m;
                                    let mgx = sum_gx[ch] / m;
                                    for j in o..o + len {
                                        gx[j] += scale * (g[j] - mg - xhat[j] * mgx);
                                    }
                                } else {
                                    for j in o..o + len {
                                        gx[j] += scale * g[j];
                                    }
                                }
                            }
                        }
                    });
                }
                Op::Relu { x } => {
                    let xs = self.value(*x).data();
                    self.accumulate(&mut grads, *x, |gx| {
                        for ((a, &gv), &xv) in gx.iter_mut().zip(&g).zip(xs) {
                            if xv > T::zero() {
                                *a += gv;
                            }
                        }
                    });
                }
                Op::Dropout { x, mask } => {
                    self.accumulate(&mut grads, *x, |gx| {
                        for ((a, &gv), &m) in gx.iter_mut().zip(&g).zip(mask) {
                            *a += gv * m;
                        }
                    });
                }
                Op::Dense { x, w, b } => {
                    let (batch, din) = self.value(*x).dims2()?;
                    let dout = self.value(*b).len();
                    self.accumulate(&mut grads, *b, |gb| {
                        for row in g.chunks_exact(dout) {
                            for (a, &v) in gb.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                    });
                    let xs = self.value(*x).data();
                    self.accumulate(&mut grads, *w, |gw| {
                        T::gemm(
                            dout,
                            batch,
                            din,
                            T::one(),
                            &g,
                            (1, dout),
                            xs,
                            (din, 1),
                            T::one(),
                            gw,
                            (din, 1),
                        );
                    });
                    let ws = self.value(*w).data();
                    self.accumulate(&mut grads, *x, |gx| {
                        T::gemm(
                            batch,
                            dout,
                            din,
                            T::one(),
                            &g,
                            (dout, 1),
                            ws,
                            (din, 1),
                            T::one(),
                            gx,
                            (din, 1),
                        );
                    });
                }
                Op::Softmax { x } => {
                    let (_, n) = node.value.dims2()?;
                    let ys = node.value.data();
                    self.accumulate(&mut grads, *x, |gx| {
                        for ((gr, yr), ar) in g.chunks_exact(n).zip(ys.chunks_exact(n)).zip(gx.chunks_exact_mut(n)) {
                            let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                            for ((a, &gv), &yv) in ar.iter_mut().zip(gr).zip(yr) {
                                *a += yv * (gv - dot);
                            }
                        }
                    });
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        self.accumulate(&mut grads, v, |gx| {
                            for (t, &gv) in gx.iter_mut().zip(&g) {
                                *t += gv;
                            }
                        });
                    }
                }
                Op::Reshape { x } => {
                    self.accumulate(&mut grads, *x, |gx| {
                        for (t, &gv) in gx.iter_mut().zip(&g) {
                            *t += gv;
                        }
                    });
                }
                Op::Sum { x } => {
                    let gv = g[0];
                    self.accumulate(&mut grads, *x, |gx| gx.iter_mut().for_each(|t| *t += gv));
                }
                Op::Scale { x, factor } => {
                    self.accumulate(&mut grads, *x, |gx| {
                        for (t, &gv) in gx.iter_mut().zip(&g) {
                            *t += gv * *factor;
                        }
                    });
                }
                Op::ProbLoss { probs, picks, kind } => {
                    let (_, n) = self.value(*probs).dims2()?;
                    let ps = self.value(*probs).data();
                    let scale = g[0] / T::of(picks.len() as f64);
                    self.accumulate(&mut grads, *probs, |gp| {
                        for &(r, c) in picks {
                            let p = ps[r * n + c];
                            gp[r * n + c] += scale * pick_loss_grad(p, *kind);
                        }
                    });
                }
            }
        }
        Ok(LeafGrads { grads: leaves })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(slot);
    }

    #[allow(clippy::too_many_arguments)]
    fn conv1d_backward(
        &self,
        grads: &mut [Option<Vec<T>>],
        g: &[T],
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<()> {
        let (batch, cin, len) = self.value(x).dims3()?;
        let (cout, _, k) = self.value(w).dims3()?;
        let lout = (len + 2 * padding - k) / stride + 1;
        let geo = ConvGeometry {
            cin,
            len,
            k,
            stride,
            padding,
            lout,
        };
        let ck = cin * k;
        self.accumulate(grads, b, |gb| {
            for bi in 0..batch {
                for (co, a) in gb.iter_mut().enumerate() {
                    let o = (bi * cout + co) * lout;
                    *a += g[o..o + lout].iter().copied().sum::<T>();
                }
            }
        });
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        if let Some(d) = direct(&geo, cout) {
            let mut gx = grads[x.0].take();
            let mut gw = grads[w.0].take();
            if self.rg(x) {
                gx.get_or_insert_with(|| vec![T::zero(); batch * cin * len]);
            }
            if self.rg(w) {
                gw.get_or_insert_with(|| vec![T::zero(); cout * cin * k]);
            }
            kernels::backward(&d, batch, xs, ws, g, gx.as_deref_mut(), gw.as_deref_mut());
            grads[x.0] = gx;
            grads[w.0] = gw;
            return Ok(());
        }
        let mut cols = Vec::new();
        self.accumulate(grads, w, |gw| {
            for bi in 0..batch {
                let xb = &xs[bi * cin * len..(bi + 1) * cin * len];
                let direct = geo.im2col(xb, &mut cols);
                let c: &[T] = direct.unwrap_or(&cols);
                let gb = &g[bi * cout * lout..(bi + 1) * cout * lout];
                T::gemm(
                    cout,
                    lout,
                    ck,
                    T::one(),
                    gb,
                    (lout, 1),
                    c,
                    (1, lout),
                    T::one(),
                    gw,
                    (ck, 1),
                );
            }
        });
        self.accumulate(grads, x, |gx| {
            let mut dcols = vec![T::zero(); ck * lout];
            for bi in 0..batch {
                let gb = &g[bi * cout * lout..(bi + 1) * cout * lout];
                T::gemm(
                    ck,
                    cout,
                    lout,
                    T::one(),
                    ws,
                    (1, ck),
                    gb,
                    (lout, 1),
                    T::zero(),
                    &mut dcols,
                    (lout, 1),
                );
                geo.col2im_add(&dcols, &mut gx[bi * cin * len..(bi + 1) * cin * len]);
            }
        });
        Ok(())
    }
}

/// Loss of one probability, clamped like [`Tape::prob_loss`].
pub fn log_loss(p: f64, kind: LossKind) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    match kind {
        LossKind::Positive => -p.ln(),
        LossKind::Negative => -(1.0 - p).ln(),
    }
}

fn pick_loss_grad<T: Scalar>(p: T, kind: LossKind) -> T {
    let lo = T::of(PROB_FLOOR);
    let hi = T::one() - lo;
    if p < lo || p > hi {
        return T::zero();
    }
    match kind {
        LossKind::Positive => -T::one() / p,
        LossKind::Negative => T::one() / (T::one() - p),
    }
}

struct ConvGeometry {
    cin: usize,
    len: usize,
    k: usize,
    stride: usize,
    padding: usize,
    lout: usize,
}

/// Largest `cin * cout` for which the direct kernel is used.
const DIRECT_MAX_CHANNELS: usize = 1024;

fn direct(geo: &ConvGeometry, cout: usize) -> Option<kernels::Direct> {
    let fits = geo.stride == 1 && geo.padding < geo.k && geo.cin * cout <= DIRECT_MAX_CHANNELS;
    fits.then_some(kernels::Direct {
        cin: geo.cin,
        cout,
        len: geo.len,
        k: geo.k,
        padding: geo.padding,
        lout: geo.lout,
    })
}

impl ConvGeometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }

    /// Output positions `[lo, hi)` for which tap `kk` reads inside the input.
    fn valid_range(&self, kk: usize) -> (usize, usize) {
        // pos = t*stride + kk - padding must satisfy 0 <= pos < len.
        let s = self.stride;
        let lo = self.padding.saturating_sub(kk).div_ceil(s);
        let hi = if self.len + self.padding > kk {
            ((self.len + self.padding - kk - 1) / s + 1).min(self.lout)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Unfolds one batch item into `[cin*k, lout]`. A pointwise kernel needs
    /// no copy; the input slice is returned instead.
    fn im2col<'a, T: Scalar>(&self, x: &'a [T], cols: &mut Vec<T>) -> Option<&'a [T]> {
        if self.is_pointwise() {
            return Some(x);
        }
        let (k, lout) = (self.k, self.lout);
        cols.resize(self.cin * k * lout, T::zero());
        for ci in 0..self.cin {
            let xrow = &x[ci * self.len..(ci + 1) * self.len];
            for kk in 0..k {
                let dst = &mut cols[(ci * k + kk) * lout..(ci * k + kk + 1) * lout];
                let (lo, hi) = self.valid_range(kk);
                dst[..lo].fill(T::zero());
                dst[hi..].fill(T::zero());
                if lo < hi {
                    let start = lo * self.stride + kk - self.padding;
                    if self.stride == 1 {
                        dst[lo..hi].copy_from_slice(&xrow[start..start + hi - lo]);
                    } else {
                        for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                            *d = xrow[start + j * self.stride];
                        }
                    }
                }
            }
        }
        None
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], gx: &mut [T]) {
        let (k, lout) = (self.k, self.lout);
        for ci in 0..self.cin {
            let grow = &mut gx[ci * self.len..(ci + 1) * self.len];
            for kk in 0..k {
                let src = &cols[(ci * k + kk) * lout..(ci * k + kk + 1) * lout];
                let (lo, hi) = self.valid_range(kk);
                if lo >= hi {
                    continue;
                }
                let start = lo * self.stride + kk - self.padding;
                if self.stride == 1 {
                    for (g, &v) in grow[start..start + hi - lo].iter_mut().zip(&src[lo..hi]) {
                        *g += v;
                    }
                } else {
                    for (j, &v) in src[lo..hi].iter().enumerate() {
                        grow[start + j * self.stride] += v;
                    }
                }
            }
        }
    }
}
