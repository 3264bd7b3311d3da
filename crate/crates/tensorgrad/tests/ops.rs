use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorgrad::{grad_check, Result, Tape, Tensor, TensorError, Var, FD_STEP};

const TOL: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero in magnitude, for kink-sensitive ops.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// sum(out * weights) for a fixed random weight tensor, so every output coordinate matters.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(tape.shape(out), &mut rng);
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn check<F>(f: F, inputs: &[Tensor<f64>])
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let report = grad_check(f, inputs, FD_STEP).unwrap();
    assert!(
        report.max_rel_error <= TOL,
        "rel err {:e} at {:?} (analytic {}, numeric {})",
        report.max_rel_error,
        report.worst,
        report.analytic,
        report.numeric
    );
}

#[test]
fn conv2d_identity_kernel_returns_input() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones(vec![1, 1, 3, 3]));
    let k = tape.constant(Tensor::ones(vec![1, 1, 1, 1]));
    let y = tape.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
}

#[test]
fn conv2d_zero_kernel_annihilates() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(random(&[2, 3, 6, 6], &mut rng));
    let k = tape.constant(Tensor::zeros(vec![4, 3, 3, 3]));
    let y = tape.conv2d(x, k, 1, 1).unwrap();
    assert_eq!(tape.shape(y), &[2, 4, 6, 6]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv2d_output_shape_and_errors() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(vec![1, 2, 7, 7]));
    let k = tape.constant(Tensor::zeros(vec![3, 2, 3, 3]));
    let y = tape.conv2d(x, k, 2, 1).unwrap();
    assert_eq!(tape.shape(y), &[1, 3, 4, 4]);

    let bad = tape.constant(Tensor::zeros(vec![3, 5, 3, 3]));
    let err = tape.conv2d(x, bad, 1, 0).unwrap_err();
    assert!(err.to_string().contains("2 channels"), "{err}");
    // (7 + 0 - 3) / 3 is not exact
    assert!(matches!(tape.conv2d(x, k, 3, 0), Err(TensorError::Shape { .. })));
    let big = tape.constant(Tensor::zeros(vec![1, 2, 9, 9]));
    assert!(tape.conv2d(x, big, 1, 0).is_err());
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[1, 2, 5, 5], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
            check(
                |t, v| {
                    let y = t.conv2d(v[0], v[1], stride, pad)?;
                    weighted_sum(t, y, 100 + seed)
                },
                &[x.clone(), k.clone()],
            );
        }
    }
}

#[test]
fn softmax_uniform_and_saturation() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(vec![1, 4, 2, 2], 0.7));
    let p = tape.softmax_channels(x).unwrap();
    assert!(tape.value(p).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::new(vec![1, 2, 1, 1], vec![0.0, 1e4]).unwrap());
    let p = tape.softmax_channels(x).unwrap();
    let d = tape.value(p).data();
    assert!(d.iter().all(|v| v.is_finite()));
    assert!(d[0] < 1e-30 && (d[1] - 1.0).abs() < 1e-7);
}

#[test]
fn softmax_rejects_non_finite() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![1, 2, 1, 1], vec![f64::NAN, 0.0]).unwrap());
    assert!(matches!(tape.softmax_channels(x), Err(TensorError::NonFinite { .. })));
    let y = tape.constant(Tensor::new(vec![1, 2, 1, 1], vec![f64::INFINITY, 0.0]).unwrap());
    assert!(tape.log_softmax_channels(y).is_err());
}

#[test]
fn softmax_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[2, 4, 3, 3], &mut rng).map(|v| 3.0 * v);
        check(|t, v| {
            let y = t.softmax_channels(v[0])?;
            weighted_sum(t, y, seed)
        }, &[x.clone()]);
        check(|t, v| {
            let y = t.log_softmax_channels(v[0])?;
            weighted_sum(t, y, seed + 7)
        }, &[x]);
    }
}

#[test]
fn l2_normalize_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
    let y = tape.l2_normalize(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.6, 0.8]);

    let u = tape.constant(Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap());
    let v = tape.l2_normalize(u, 1).unwrap();
    assert_eq!(tape.value(v), tape.value(u));

    let z = tape.constant(Tensor::new(vec![3], vec![0.0, 1e-9, 0.0]).unwrap());
    assert!(matches!(tape.l2_normalize(z, 0), Err(TensorError::DegenerateNorm { .. })));
}

#[test]
fn l2_normalize_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        check(|t, v| {
            let y = t.l2_normalize(v[0], 0)?;
            weighted_sum(t, y, seed + 1000)
        }, &[random(&[8], &mut rng)]);
        check(|t, v| {
            let y = t.l2_normalize(v[0], 1)?;
            weighted_sum(t, y, seed + 1001)
        }, &[random(&[3, 5, 2], &mut rng)]);
    }
}

#[test]
fn backward_of_sum_is_ones_and_zero_scale_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(random(&[2, 3, 4], &mut rng));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(random(&[5], &mut rng));
    let z = tape.scale(x, 0.0);
    let s = tape.sum(z);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 0.0));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::ones(vec![3]));
    assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn backward_is_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(random(&[1, 2, 4, 4], &mut rng));
    let k = tape.leaf(random(&[3, 2, 3, 3], &mut rng));
    let y = tape.conv2d(x, k, 1, 1).unwrap();
    let p = tape.softmax_channels(y).unwrap();
    let l = weighted_sum(&mut tape, p, 4).unwrap();
    tape.backward(l).unwrap();
    let once = (tape.grad(x).unwrap().clone(), tape.grad(k).unwrap().clone());
    tape.backward(l).unwrap();
    for (a, b) in tape.grad(x).unwrap().data().iter().zip(once.0.data()) {
        assert_eq!(*a, 2.0 * b);
    }
    for (a, b) in tape.grad(k).unwrap().data().iter().zip(once.1.data()) {
        assert_eq!(*a, 2.0 * b);
    }
    tape.zero_grad();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 0.0));
}

#[test]
fn unreachable_leaf_has_zero_grad_and_constants_have_none() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::ones(vec![2]));
    let unused = tape.leaf(Tensor::ones(vec![3]));
    let c = tape.constant(Tensor::ones(vec![2]));
    let y = tape.mul(x, c).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert!(tape.grad(unused).unwrap().data().iter().all(|&g| g == 0.0));
    assert!(tape.grad(c).is_none());
}

#[test]
fn backward_visits_each_operation_once_in_reverse_order() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(vec![3], vec![0.5, 1.5, 2.0]).unwrap());
    let a = tape.exp(x);
    let b = tape.mul(a, x).unwrap();
    let c = tape.log(b);
    let s = tape.sum(c);
    tape.backward(s).unwrap();
    let trace: Vec<usize> = tape.last_backward_trace().iter().map(|v| v.index()).collect();
    assert_eq!(trace, vec![s.index(), c.index(), b.index(), a.index(), x.index()]);
}

#[test]
fn composite_network_gradient_matches_finite_differences() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[2, 1, 6, 6], &mut rng);
        let k1 = random(&[4, 1, 3, 3], &mut rng);
        let b1 = away_from_zero(&[4], &mut rng);
        let k2 = random(&[3, 4, 1, 1], &mut rng);
        let labels: Vec<usize> = (0..2 * 36).map(|_| rng.gen_range(0..3)).collect();
        let mut onehot = Tensor::<f64>::zeros(vec![2, 3, 6, 6]);
        for (p, &c) in labels.iter().enumerate() {
            let (n, hw) = (p / 36, p % 36);
            onehot.data_mut()[(n * 3 + c) * 36 + hw] = 1.0;
        }
        // keep relu pre-activations off the kink
        {
            let mut tape = Tape::<f64>::new();
            let xv = tape.constant(x.clone());
            let kv = tape.constant(k1.clone());
            let bv = tape.constant(b1.clone());
            let h = tape.conv2d(xv, kv, 1, 1).unwrap();
            let h = tape.add_bias(h, bv).unwrap();
            if tape.value(h).data().iter().any(|v| v.abs() < 1e-3) {
                continue;
            }
        }
        check(
            |t, v| {
                let h = t.conv2d(v[0], v[1], 1, 1)?;
                let h = t.add_bias(h, v[2])?;
                let h = t.relu(h);
                let logits = t.conv2d(h, v[3], 1, 0)?;
                let logp = t.log_softmax_channels(logits)?;
                let y = t.constant(onehot.clone());
                let ce = t.mul(logp, y)?;
                let ce = t.mean(ce);
                Ok(t.scale(ce, -3.0))
            },
            &[x, k1, b1, k2],
        );
    }
}

#[test]
fn elementwise_and_structural_ops_match_finite_differences() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let a = random(&[3, 4], &mut rng);
        let b = away_from_zero(&[3, 4], &mut rng);
        let pos = Tensor::from_fn(vec![3, 4], |_| rng.gen_range(0.2..2.0));
        check(|t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[2])?;
            let m = t.mul(d, v[1])?;
            let q = t.div(m, v[2])?;
            let e = t.exp(q);
            let l = t.log(v[2]);
            let r = t.relu(v[1]);
            let z = t.add(e, l)?;
            let z = t.add(z, r)?;
            let z = t.add_scalar(z, 0.3);
            let z = t.scale(z, 1.7);
            weighted_sum(t, z, seed)
        }, &[a.clone(), b.clone(), pos.clone()]);

        let c = random(&[4, 5], &mut rng);
        check(|t, v| {
            let m = t.matmul(v[0], v[1])?;
            let tr = t.transpose(m)?;
            weighted_sum(t, tr, seed + 1)
        }, &[a.clone(), c]);

        let x = random(&[2, 3, 4, 4], &mut rng);
        let bias = random(&[3], &mut rng);
        let other = random(&[2, 2, 4, 4], &mut rng);
        check(|t, v| {
            let y = t.add_bias(v[0], v[1])?;
            let p = t.max_pool2(y)?;
            let u = t.upsample2(p)?;
            let cat = t.concat_channels(&[u, v[2]])?;
            let sl = t.slice_batch(cat, 1, 1)?;
            let r = t.reshape(sl, &[5, 16])?;
            let s = t.sum_axes(r, &[1])?;
            let mean = t.mean_axes(cat, &[0, 2, 3])?;
            let w1 = weighted_sum(t, s, seed + 2)?;
            let w2 = weighted_sum(t, mean, seed + 3)?;
            t.add(w1, w2)
        }, &[x, bias, other]);

        let y = random(&[2, 3, 3], &mut rng);
        let mask: Vec<bool> = (0..18).map(|i| i % 3 != 1).collect();
        let scalar = random(&[1], &mut rng);
        check(|t, v| {
            let sel = t.masked_select(v[0], &mask)?;
            let bc = t.broadcast(v[1], &[12])?;
            let z = t.mul(sel, bc)?;
            weighted_sum(t, z, seed + 4)
        }, &[y, scalar]);
    }
}

#[test]
fn grad_check_examples() {
    let r = grad_check(|t, v| t.mul(v[0], v[0]), &[Tensor::scalar(3.0)], 1e-5).unwrap();
    assert!((r.analytic - 6.0).abs() < 1e-12);
    assert!(r.max_rel_error <= 1e-9, "{r:?}");

    let r = grad_check(
        |t, v| {
            let z = t.scale(v[0], 0.0);
            let s = t.sum(z);
            Ok(t.add_scalar(s, 2.5))
        },
        &[Tensor::ones(vec![4])],
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-8, "{r:?}");

    let err = grad_check(|t, v| Ok(t.exp(v[0])), &[Tensor::ones(vec![2])], 1e-5).unwrap_err();
    assert!(matches!(err, TensorError::NonScalarFunction(_)));
}

#[test]
fn single_precision_forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(random(&[2, 3, 8, 8], &mut rng).cast());
        let k = tape.leaf(random(&[5, 3, 3, 3], &mut rng).cast());
        let y = tape.conv2d(x, k, 1, 1).unwrap();
        let p = tape.softmax_channels(y).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        (tape.value(p).clone(), tape.grad(k).unwrap().clone())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_sums_to_one(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![1, 3, 2, 2], vals).unwrap());
        let p = tape.softmax_channels(x).unwrap();
        let d = tape.value(p).data();
        for px in 0..4 {
            let s: f64 = (0..3).map(|c| d[c * 4 + px]).sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
            prop_assert!((0..3).all(|c| d[c * 4 + px] >= 0.0));
        }
    }
}
