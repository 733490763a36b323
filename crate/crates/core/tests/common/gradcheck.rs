//! Central finite-difference oracle for parameter gradients.
//!
//! Builds a random small residual-style network that touches every
//! differentiable op, then compares the tape's gradients with
//! `(L(w + h) − L(w − h)) / 2h` coordinate by coordinate.

use negres::autodiff::{LossKind, Mode, ParamStore, RunningStats, Tape, Tensor, Var, BN_EPSILON};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random small residual-style network exercising every op. The loss is a
/// pure function of the parameter values (dropout masks come from a fixed
/// seed on each evaluation).
struct GradCheckNet {
    batch: usize,
    len: usize,
    classes: usize,
    input: Vec<f64>,
    picks_pos: Vec<(usize, usize)>,
    picks_neg: Vec<(usize, usize)>,
    dropout_seed: u64,
    store: ParamStore<f64>,
}

struct Margins {
    min_relu: f64,
    min_pool_gap: f64,
}

impl GradCheckNet {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let batch = rng.random_range(1..=4);
        let len = rng.random_range(8..=32);
        let classes = rng.random_range(2..=4);
        let c1 = rng.random_range(2..=3);
        let c2 = rng.random_range(2..=4);
        let mut u = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-s..s)).collect() };
        let mut store = ParamStore::new();
        let pooled = (len - 2) / 2 + 1;
        let mut add = |name: &str, shape: &[usize], v: Vec<f64>| {
            store.add(name, Tensor::new(shape.to_vec(), v).unwrap()).unwrap();
        };
        add("c1.w", &[c1, 1, 3], u(c1 * 3, 1.0));
        add("c1.b", &[c1], u(c1, 0.5));
        add("bn1.g", &[c1], u(c1, 1.0).iter().map(|v| 1.0 + 0.5 * v).collect());
        add("bn1.b", &[c1], u(c1, 0.5));
        add("c2.w", &[c2, c1, 3], u(c2 * c1 * 3, 0.8));
        add("c2.b", &[c2], u(c2, 0.5));
        add("bn2.g", &[c2], u(c2, 1.0).iter().map(|v| 1.0 + 0.5 * v).collect());
        add("bn2.b", &[c2], u(c2, 0.5));
        add("proj.w", &[c2, c1, 1], u(c2 * c1, 1.0));
        add("proj.b", &[c2], u(c2, 0.5));
        add("fc.w", &[classes, c2 * pooled], u(classes * c2 * pooled, 0.5));
        add("fc.b", &[classes], u(classes, 0.5));
        let input = u(batch * len, 1.5);
        let picks_pos = (0..batch).map(|r| (r, rng.random_range(0..classes))).collect();
        let picks_neg = (0..batch).map(|r| (r, rng.random_range(0..classes))).collect();
        Self {
            batch,
            len,
            classes,
            input,
            picks_pos,
            picks_neg,
            dropout_seed: rng.random(),
            store,
        }
    }

    fn build(&self, tape: &mut Tape<f64>) -> (Var, Margins) {
        let s = &self.store;
        let p = |tape: &mut Tape<f64>, n: &str| tape.param(s, s.id(n).unwrap());
        let mut drng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let stats1 = RunningStats::new(s.by_name("c1.b").unwrap().tensor.len());
        let stats2 = RunningStats::new(s.by_name("c2.b").unwrap().tensor.len());

        let x = tape.leaf(Tensor::new(vec![self.batch, 1, self.len], self.input.clone()).unwrap());
        let (w, b) = (p(tape, "c1.w"), p(tape, "c1.b"));
        let h = tape.conv1d(x, w, b, 1, 1).unwrap();
        let (g, bb) = (p(tape, "bn1.g"), p(tape, "bn1.b"));
        let (h, _) = tape.batchnorm1d(h, g, bb, &stats1, Mode::Train, BN_EPSILON).unwrap();
        let pre1 = h;
        let h = tape.relu(h);
        let h = tape.dropout(h, 0.25, Mode::Train, &mut drng).unwrap();
        let pool_in = h;
        let h = tape.maxpool1d(h, 2, 2).unwrap();
        let skip_in = h;
        let (w, b) = (p(tape, "c2.w"), p(tape, "c2.b"));
        let f = tape.conv1d(h, w, b, 1, 1).unwrap();
        let (g, bb) = (p(tape, "bn2.g"), p(tape, "bn2.b"));
        let (f, _) = tape.batchnorm1d(f, g, bb, &stats2, Mode::Train, BN_EPSILON).unwrap();
        let (w, b) = (p(tape, "proj.w"), p(tape, "proj.b"));
        let sc = tape.conv1d(skip_in, w, b, 1, 0).unwrap();
        let sum = tape.add(f, sc).unwrap();
        let pre2 = sum;
        let h = tape.relu(sum);
        let h = tape.flatten(h).unwrap();
        let (w, b) = (p(tape, "fc.w"), p(tape, "fc.b"));
        let z = tape.dense(h, w, b).unwrap();
        let probs = tape.softmax(z).unwrap();
        let lp = tape
            .prob_loss(probs, self.picks_pos.clone(), LossKind::Positive)
            .unwrap();
        let ln = tape
            .prob_loss(probs, self.picks_neg.clone(), LossKind::Negative)
            .unwrap();
        let loss = tape.add(lp, ln).unwrap();

        let min_relu = [pre1, pre2]
            .iter()
            .flat_map(|&v| tape.value(v).data().iter().map(|x| x.abs()))
            .fold(f64::INFINITY, f64::min);
        let pv = tape.value(pool_in);
        let plen = pv.shape()[2];
        let mut min_pool_gap = f64::INFINITY;
        for row in pv.data().chunks_exact(plen) {
            for pair in row.chunks_exact(2) {
                min_pool_gap = min_pool_gap.min((pair[0] - pair[1]).abs());
            }
        }
        (loss, Margins { min_relu, min_pool_gap })
    }

    fn loss(&self) -> f64 {
        let mut tape = Tape::new();
        let (l, _) = self.build(&mut tape);
        tape.value(l).item().unwrap()
    }
}

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-5;
/// Kink clearance required before central differences are meaningful: a
/// step of 1e-4 on one weight moves activations by roughly that much.
const KINK_MARGIN: f64 = 2e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    let s = a.abs().max(b.abs());
    if s < 1e-10 {
        d
    } else {
        d / s
    }
}

/// Returns the worst relative error over every parameter coordinate.
pub fn gradient_check(seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = loop {
        let net = GradCheckNet::random(&mut rng);
        let mut tape = Tape::new();
        let (_, m) = net.build(&mut tape);
        if m.min_relu > KINK_MARGIN && m.min_pool_gap > KINK_MARGIN {
            break net;
        }
    };
    assert!(net.classes >= 2);

    let mut analytic = net.store.clone();
    analytic.zero_grad();
    {
        let mut tape = Tape::new();
        let (loss, _) = net.build(&mut tape);
        tape.backward(loss, &mut analytic).unwrap();
    }

    let mut worst = 0.0f64;
    let mut coords = 0;
    let names: Vec<String> = net.store.iter().map(|p| p.name.clone()).collect();
    for name in names {
        let id = net.store.id(&name).unwrap();
        for j in 0..net.store.get(id).tensor.len() {
            let orig = net.store.get(id).tensor.data()[j];
            net.store.get_mut(id).tensor.data_mut()[j] = orig + FD_STEP;
            let up = net.loss();
            net.store.get_mut(id).tensor.data_mut()[j] = orig - FD_STEP;
            let down = net.loss();
            net.store.get_mut(id).tensor.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(id).grad.data()[j];
            worst = worst.max(rel_err(a, numeric));
            coords += 1;
        }
    }
    (worst, coords)
}
