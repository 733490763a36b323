use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn conv1d_hand_example() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
    let w = tape.leaf(t(&[1, 1, 2], &[1.0, 0.0]));
    let b = tape.leaf(t(&[1], &[0.0]));
    let y = tape.conv1d(x, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 2]);
    assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
}

#[test]
fn conv1d_unit_kernel_is_identity() {
    let mut tape = Tape::new();
    let xs = [0.3, -1.2, 4.0, 2.5, 0.0, 7.0];
    let x = tape.leaf(t(&[2, 1, 3], &xs));
    let w = tape.leaf(t(&[1, 1, 1], &[1.0]));
    let b = tape.leaf(t(&[1], &[0.0]));
    let y = tape.conv1d(x, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &xs);
}

#[test]
fn conv1d_same_padding_length() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[1, 1, 250]));
    let w = tape.leaf(Tensor::zeros(&[2, 1, 15]));
    let b = tape.leaf(Tensor::zeros(&[2]));
    let y = tape.conv1d(x, w, b, 1, 7).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 2, 250]);
}

#[test]
fn conv1d_channel_mismatch() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[1, 2, 8]));
    let w = tape.leaf(Tensor::zeros(&[1, 3, 3]));
    let b = tape.leaf(Tensor::zeros(&[1]));
    assert!(matches!(tape.conv1d(x, w, b, 1, 0), Err(crate::Error::Dimension(_))));
}

#[test]
fn maxpool_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 4], &[1.0, 3.0, 2.0, 5.0]));
    let y = tape.maxpool1d(x, 2, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
    let id = tape.maxpool1d(x, 1, 1).unwrap();
    assert_eq!(tape.value(id).data(), &[1.0, 3.0, 2.0, 5.0]);
    assert!(matches!(tape.maxpool1d(x, 5, 1), Err(crate::Error::Dimension(_))));
}

#[test]
fn maxpool_tie_routes_to_first_index() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 2], &[2.0, 2.0]).with_requires_grad(true));
    let y = tape.maxpool1d(x, 2, 2).unwrap();
    let s = tape.sum(y);
    let mut store = ParamStore::new();
    let g = tape.backward(s, &mut store).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0, 0.0]);
}

#[test]
fn batchnorm_two_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 2], &[1.0, 3.0]));
    let g = tape.leaf(t(&[1], &[1.0]));
    let b = tape.leaf(t(&[1], &[0.0]));
    let stats = RunningStats::new(1);
    let (y, batch) = tape.batchnorm1d(x, g, b, &stats, Mode::Train, 0.0).unwrap();
    assert!(close(tape.value(y).data(), &[-1.0, 1.0], 1e-12));
    let batch = batch.unwrap();
    assert_eq!(batch.mean, vec![2.0]);
    assert_eq!(batch.unbiased_var, vec![2.0]);
}

#[test]
fn batchnorm_zero_gamma_gives_beta() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(
        &[2, 2, 3],
        &[1.0, 5.0, -2.0, 0.5, 0.1, 9.0, 3.0, 3.0, 1.0, -4.0, 2.0, 2.0],
    ));
    let g = tape.leaf(t(&[2], &[0.0, 0.0]));
    let b = tape.leaf(t(&[2], &[0.25, -1.0]));
    let stats = RunningStats::new(2);
    let (y, _) = tape.batchnorm1d(x, g, b, &stats, Mode::Train, BN_EPSILON).unwrap();
    let want = [0.25, 0.25, 0.25, -1.0, -1.0, -1.0, 0.25, 0.25, 0.25, -1.0, -1.0, -1.0];
    assert_eq!(tape.value(y).data(), &want);
}

#[test]
fn batchnorm_eval_is_deterministic_and_uses_running_stats() {
    let stats = RunningStats {
        mean: vec![1.0],
        var: vec![4.0],
    };
    let run = || {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 3], &[1.0, 3.0, 5.0]));
        let g = tape.leaf(t(&[1], &[1.0]));
        let b = tape.leaf(t(&[1], &[0.0]));
        let (y, batch) = tape.batchnorm1d(x, g, b, &stats, Mode::Eval, 0.0).unwrap();
        assert!(batch.is_none());
        tape.value(y).data().to_vec()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(close(&a, &[0.0, 1.0, 2.0], 1e-12));
}

#[test]
fn batchnorm_degenerate_batch() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 1], &[1.0]));
    let g = tape.leaf(t(&[1], &[1.0]));
    let b = tape.leaf(t(&[1], &[0.0]));
    let stats = RunningStats::new(1);
    assert!(matches!(
        tape.batchnorm1d(x, g, b, &stats, Mode::Train, BN_EPSILON),
        Err(crate::Error::DegenerateBatch(_))
    ));
    assert!(tape.batchnorm1d(x, g, b, &stats, Mode::Eval, BN_EPSILON).is_ok());
}

#[test]
fn running_stats_moving_average() {
    let mut r = RunningStats::<f64>::new(1);
    r.update(
        &BatchStats {
            mean: vec![2.0],
            unbiased_var: vec![3.0],
        },
        BN_MOMENTUM,
    );
    assert!((r.mean[0] - 0.2).abs() < 1e-12);
    assert!((r.var[0] - (0.9 + 0.3)).abs() < 1e-12);
}

#[test]
fn relu_forward_and_dead_region() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]).with_requires_grad(true));
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    let s = tape.scale(y, 5.0);
    let s = tape.sum(s);
    let g = tape.backward(s, &mut ParamStore::new()).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 5.0]);

    let mut tape = Tape::new();
    let pos = [0.5, 1.5, 3.0];
    let x = tape.leaf(t(&[3], &pos));
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &pos);
}

#[test]
fn dropout_identity_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
    let y = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
    assert_eq!(tape.value(y).data(), tape.value(x).data());
    let y = tape.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
    assert_eq!(tape.value(y).data(), tape.value(x).data());
    assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
}

#[test]
fn dropout_rate_concentration() {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[n], 1.0));
    let y = tape.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
    let dropped = tape.value(y).data().iter().filter(|&&v| v == 0.0).count();
    let frac = dropped as f64 / n as f64;
    assert!((frac - 0.5).abs() <= 0.01, "drop fraction {frac}");
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn dense_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 2], &[1.0, 2.0]));
    let w = tape.leaf(t(&[1, 2], &[3.0, 4.0]));
    let b = tape.leaf(t(&[1], &[1.0]));
    let y = tape.dense(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[12.0]);

    let x = tape.leaf(t(&[2, 2], &[0.5, -1.0, 0.5, -1.0]));
    let eye = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let zero = tape.leaf(t(&[2], &[0.0, 0.0]));
    let y = tape.dense(x, eye, zero).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, -1.0, 0.5, -1.0]);
    assert_eq!(tape.value(y).row(0), tape.value(y).row(1));

    let bad = tape.leaf(t(&[2, 3], &[0.0; 6]));
    assert!(tape.dense(x, bad, zero).is_err());
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3, 2], &[0.0, 0.0, 1000.0, 0.0, -1000.0, 1000.0]));
    let p = tape.softmax(x).unwrap();
    let v = tape.value(p).data();
    assert!(close(&v[..2], &[0.5, 0.5], 1e-15));
    assert!((v[2] - 1.0).abs() < 1e-12 && v[3] < 1e-300 + 1e-12);
    assert!(v.iter().all(|x| x.is_finite()));

    let x = tape.leaf(t(&[1, 3], &[1f64.ln(), 2f64.ln(), 3f64.ln()]));
    let p = tape.softmax(x).unwrap();
    assert!(close(tape.value(p).data(), &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0], 1e-15));

    let x = tape.leaf(t(&[1, 1], &[0.0]));
    assert!(tape.softmax(x).is_err());
}

#[test]
fn backward_linear_case_gives_input() {
    // loss = sum(W·X): dL/dW[o][i] = X[i] for every output o.
    let mut store = ParamStore::new();
    let wid = store.add("w", t(&[2, 3], &[0.1, 0.2, 0.3, -0.1, 0.5, 0.0])).unwrap();
    let bid = store.add("b", Tensor::zeros(&[2])).unwrap();
    let unused = store.add("unused", t(&[2], &[1.0, 1.0])).unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 3], &[2.0, -1.0, 4.0]));
    let w = tape.param(&store, wid);
    let b = tape.param(&store, bid);
    let y = tape.dense(x, w, b).unwrap();
    let loss = tape.sum(y);
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(wid).grad.data(), &[2.0, -1.0, 4.0, 2.0, -1.0, 4.0]);
    assert_eq!(store.get(unused).grad.data(), &[0.0, 0.0]);

    // Accumulates without reset.
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(wid).grad.data(), &[4.0, -2.0, 8.0, 4.0, -2.0, 8.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
    assert!(matches!(
        tape.backward(x, &mut ParamStore::new()),
        Err(crate::Error::Contract(_))
    ));
}

/// Positive log-loss through softmax on one dense layer reproduces the
/// analytic form dL/dW[k][i] = x_i · (p_k − y_k), averaged over the batch.
#[test]
fn softmax_log_loss_matches_analytic_dense_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (batch, din, n) = (3, 4, 5);
    let xs: Vec<f64> = (0..batch * din).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ws: Vec<f64> = (0..n * din).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = [1usize, 4, 0];

    let mut store = ParamStore::new();
    let wid = store.add("w", t(&[n, din], &ws)).unwrap();
    let bid = store.add("b", Tensor::zeros(&[n])).unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[batch, din], &xs));
    let w = tape.param(&store, wid);
    let b = tape.param(&store, bid);
    let z = tape.dense(x, w, b).unwrap();
    let p = tape.softmax(z).unwrap();
    let picks = labels.iter().enumerate().map(|(r, &c)| (r, c)).collect();
    let loss = tape.prob_loss(p, picks, LossKind::Positive).unwrap();
    tape.backward(loss, &mut store).unwrap();

    let probs = tape.value(p).data();
    for k in 0..n {
        for i in 0..din {
            let mut want = 0.0;
            for r in 0..batch {
                let y = if labels[r] == k { 1.0 } else { 0.0 };
                want += xs[r * din + i] * (probs[r * n + k] - y);
            }
            want /= batch as f64;
            let got = store.get(wid).grad.data()[k * din + i];
            assert!((got - want).abs() < 1e-12, "w[{k}][{i}]: {got} vs {want}");
        }
    }
}

#[test]
fn train_mode_with_fixed_dropout_seed_is_bit_identical() {
    let mut store = ParamStore::new();
    let w = store
        .add("w", t(&[2, 1, 3], &[0.3, -0.2, 0.9, 0.1, 0.4, -0.7]))
        .unwrap();
    let b = store.add("b", t(&[2], &[0.05, -0.1])).unwrap();
    let g = store.add("g", t(&[2], &[1.0, 0.8])).unwrap();
    let be = store.add("be", t(&[2], &[0.0, 0.1])).unwrap();
    let fw = store.add("fw", Tensor::full(&[3, 16], 0.01)).unwrap();
    let fb = store.add("fb", Tensor::zeros(&[3])).unwrap();
    let input: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
    let run = || {
        let mut s = store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 1, 8], &input));
        let (pw, pb, pg, pbe, pfw, pfb) = (
            tape.param(&s, w),
            tape.param(&s, b),
            tape.param(&s, g),
            tape.param(&s, be),
            tape.param(&s, fw),
            tape.param(&s, fb),
        );
        let h = tape.conv1d(x, pw, pb, 1, 1).unwrap();
        let (h, _) = tape
            .batchnorm1d(h, pg, pbe, &RunningStats::new(2), Mode::Train, BN_EPSILON)
            .unwrap();
        let h = tape.relu(h);
        let h = tape.dropout(h, 0.3, Mode::Train, &mut rng).unwrap();
        let h = tape.flatten(h).unwrap();
        let z = tape.dense(h, pfw, pfb).unwrap();
        let p = tape.softmax(z).unwrap();
        let loss = tape.prob_loss(p, vec![(0, 1), (1, 2)], LossKind::Negative).unwrap();
        tape.backward(loss, &mut s).unwrap();
        let bits: Vec<u64> = s
            .iter()
            .flat_map(|p| p.grad.data().iter().map(|v| v.to_bits()))
            .collect();
        (tape.value(loss).item().unwrap().to_bits(), bits)
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_are_simplex(
        rows in 1usize..5,
        n in 2usize..8,
        seed in any::<u64>(),
        // Beyond a spread of ~36 the top entry rounds to exactly 1.0 in f64.
        scale in 0.1f64..15.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..rows * n).map(|_| rng.random_range(-scale..scale)).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![rows, n], v).unwrap());
        let p = tape.softmax(x).unwrap();
        for r in 0..rows {
            let row = tape.value(p).row(r);
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&q| q > 0.0 && q < 1.0));
        }
    }

    #[test]
    fn conv_and_pool_lengths_follow_floor_formulas(
        len in 1usize..64,
        k in 1usize..16,
        stride in 1usize..5,
        padding in 0usize..8,
        window in 1usize..8,
    ) {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, len]));
        let w = tape.leaf(Tensor::zeros(&[1, 1, k]));
        let b = tape.leaf(Tensor::zeros(&[1]));
        let r = tape.conv1d(x, w, b, stride, padding);
        if k <= len + 2 * padding {
            let y = r.unwrap();
            prop_assert_eq!(tape.value(y).shape()[2], (len + 2 * padding - k) / stride + 1);
        } else {
            prop_assert!(r.is_err());
        }
        let r = tape.maxpool1d(x, window, stride);
        if window <= len {
            let y = r.unwrap();
            prop_assert_eq!(tape.value(y).shape()[2], (len - window) / stride + 1);
        } else {
            prop_assert!(r.is_err());
        }
    }
}
