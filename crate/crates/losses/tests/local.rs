use losses::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorgrad::{grad_check, Tape, Tensor, TensorError, Var, FD_STEP};

fn tensor_err(e: LossError) -> TensorError {
    match e {
        LossError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

fn random(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Per-pixel accumulation: `[N][class-1] -> Option<K-vector>`.
fn centers_oracle(f: &Tensor<f64>, mask: &[u8], classes: usize) -> Vec<Vec<Option<Vec<f64>>>> {
    let s = f.shape();
    let (n, k, hw) = (s[0], s[1], s[2] * s[3]);
    (0..n)
        .map(|img| {
            (1..=classes)
                .map(|c| {
                    let mut sum = vec![0.0; k];
                    let mut count = 0;
                    for p in 0..hw {
                        if mask[img * hw + p] as usize == c {
                            count += 1;
                            for ch in 0..k {
                                sum[ch] += f.data()[(img * k + ch) * hw + p];
                            }
                        }
                    }
                    (count > 0).then(|| sum.iter().map(|x| x / count as f64).collect())
                })
                .collect()
        })
        .collect()
}

fn centers_of(f: &Tensor<f64>, mask: &[u8], classes: usize) -> Vec<Vec<Option<Vec<f64>>>> {
    let mut tape = Tape::new();
    let v = tape.constant(f.clone());
    mask_centers(&mut tape, v, mask, classes)
        .unwrap()
        .iter()
        .map(|set| set.values(&tape))
        .collect()
}

#[test]
fn constant_field_centers() {
    let u = [0.5, -2.0, 3.0];
    let f = Tensor::from_fn(vec![1, 3, 4, 4], |i| u[i / 16]);
    let got = centers_of(&f, &[1; 16], 3);
    assert_eq!(got[0][0].as_deref(), Some(&u[..]));
    assert_eq!(got[0][1], None);
    assert_eq!(got[0][2], None);
}

#[test]
fn two_point_mean() {
    // 1×2×1×3 map; pixels 0 and 2 are class 1, pixel 1 background
    let f = Tensor::new(vec![1, 2, 1, 3], vec![1.0, 9.0, 3.0, 2.0, 9.0, -4.0]).unwrap();
    let got = centers_of(&f, &[1, 0, 1], 2);
    assert_eq!(got[0][0].as_deref(), Some(&[2.0, -1.0][..]));
    assert_eq!(got[0][1], None);
}

#[test]
fn centers_match_pixel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [1, 3] {
        let f = random(vec![n, 8, 16, 16], &mut rng);
        let mask: Vec<u8> = (0..n * 256).map(|_| rng.gen_range(0..=3)).collect();
        let got = centers_of(&f, &mask, 3);
        let want = centers_oracle(&f, &mask, 3);
        for (g_img, w_img) in got.iter().zip(&want) {
            for (g, w) in g_img.iter().zip(w_img) {
                let (g, w) = (g.as_ref().unwrap(), w.as_ref().unwrap());
                for (a, b) in g.iter().zip(w) {
                    assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn centers_report_counts_and_reject_bad_masks() {
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(Tensor::zeros(vec![1, 2, 2, 2]));
    let sets = mask_centers(&mut tape, v, &[0, 3, 3, 1], 3).unwrap();
    assert_eq!(sets[0].counts, vec![1, 0, 2]);
    assert_eq!(sets[0].present, vec![true, false, true]);
    assert!(matches!(
        mask_centers(&mut tape, v, &[0, 4, 0, 0], 3),
        Err(LossError::LabelOutOfRange { label: 4, max: 3 })
    ));
    assert!(matches!(mask_centers(&mut tape, v, &[0; 3], 3), Err(LossError::Shape { .. })));
}

#[test]
fn centers_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = random(vec![2, 4, 4, 4], &mut rng);
    let mask: Vec<u8> = (0..32).map(|_| rng.gen_range(0..=3)).collect();
    let w = random(vec![3, 4], &mut rng);
    let r = grad_check(
        |tape: &mut Tape<f64>, v: &[Var]| {
            let sets = mask_centers(tape, v[0], &mask, 3).map_err(tensor_err)?;
            let wv = tape.constant(w.clone());
            let mut total = None;
            for s in sets {
                let p = tape.mul(s.centers, wv)?;
                let p = tape.sum(p);
                total = Some(match total {
                    None => p,
                    Some(t) => tape.add(t, p)?,
                });
            }
            Ok(total.unwrap())
        },
        &[f],
        FD_STEP,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-6, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn centers_ignore_pixel_order(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, hw) = (3, 16);
        let f = random(vec![1, k, 4, 4], &mut rng);
        let mask: Vec<u8> = (0..hw).map(|_| rng.gen_range(0..=2)).collect();
        let mut perm: Vec<usize> = (0..hw).collect();
        for i in (1..hw).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let fp = Tensor::from_fn(vec![1, k, 4, 4], |i| f.data()[(i / hw) * hw + perm[i % hw]]);
        let mp: Vec<u8> = perm.iter().map(|&p| mask[p]).collect();
        let a = centers_of(&f, &mask, 2);
        let b = centers_of(&fp, &mp, 2);
        for (x, y) in a[0].iter().zip(&b[0]) {
            prop_assert_eq!(x.is_some(), y.is_some());
            if let (Some(x), Some(y)) = (x, y) {
                for (p, q) in x.iter().zip(y) {
                    prop_assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    /// Against a plain list: each buffer equals the last min(n_c, Q) contributions.
    #[test]
    fn bank_replays_list_oracle(seed in 0u64..10_000, q in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bank = MemoryBank::new(3, 2, q);
        let mut history: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 3];
        for step in 0..q + 50 {
            let push: Vec<Option<Vec<f64>>> = (0..3)
                .map(|c| rng.gen_bool(0.6).then(|| vec![step as f64, c as f64]))
                .collect();
            for (c, v) in push.iter().enumerate() {
                if let Some(v) = v {
                    history[c].push(v.clone());
                }
            }
            bank.push(&push).unwrap();
        }
        for c in 0..3 {
            let h = &history[c];
            let expect = &h[h.len().saturating_sub(q)..];
            let got: Vec<Vec<f64>> = bank.buffer(c + 1).iter().cloned().collect();
            prop_assert_eq!(&got[..], expect);
        }
    }
}

#[test]
fn bank_presence_and_fifo() {
    let mut bank = MemoryBank::new(3, 2, 2);
    bank.push(&[Some(vec![1.0, 0.0]), None, Some(vec![3.0, 0.0])]).unwrap();
    assert_eq!((bank.buffer(1).len(), bank.buffer(2).len(), bank.buffer(3).len()), (1, 0, 1));
    bank.push(&[Some(vec![2.0, 0.0]), None, None]).unwrap();
    bank.push(&[Some(vec![3.0, 0.0]), None, None]).unwrap();
    let b1: Vec<f64> = bank.buffer(1).iter().map(|v| v[0]).collect();
    assert_eq!(b1, vec![2.0, 3.0]);
    assert_eq!(bank.len(), 3);
}

#[test]
fn bank_full_pushes_keep_last_q() {
    for q in [DEFAULT_BANK_CAPACITY, 256] {
        let mut bank = MemoryBank::new(3, 1, q);
        for i in 0..q + 5 {
            bank.push(&[Some(vec![i as f64]), Some(vec![i as f64]), Some(vec![i as f64])]).unwrap();
        }
        for c in 1..=3 {
            let got: Vec<f64> = bank.buffer(c).iter().map(|v| v[0]).collect();
            let want: Vec<f64> = (5..q + 5).map(|i| i as f64).collect();
            assert_eq!(got, want);
        }
    }
}

#[test]
fn bank_rejects_wrong_dimension_without_partial_writes() {
    let mut bank = MemoryBank::new(2, 3, 4);
    let err = bank.push(&[Some(vec![1.0, 2.0, 3.0]), Some(vec![1.0])]);
    assert!(matches!(err, Err(LossError::Dimension { expected: 3, got: 1 })));
    assert!(bank.is_empty());
    assert!(matches!(bank.push(&[None]), Err(LossError::Shape { .. })));
}

#[test]
fn bank_push_from_teacher_centers() {
    let mut tape = Tape::<f32>::new();
    let f = Tensor::from_fn(vec![1, 2, 1, 4], |i| i as f32);
    let v = tape.constant(f);
    let sets = mask_centers(&mut tape, v, &[1, 1, 3, 0], 3).unwrap();
    let mut bank = MemoryBank::new(3, 2, 8);
    bank.push_centers(&tape, &sets[0]).unwrap();
    assert_eq!(bank.buffer(1)[0], vec![0.5, 4.5]);
    assert!(bank.buffer(2).is_empty());
    assert_eq!(bank.buffer(3)[0], vec![2.0, 6.0]);
}

/// One center row per class, built directly as a leaf so the loss can be checked in isolation.
fn center_set(tape: &mut Tape<f64>, rows: Tensor<f64>, present: Vec<bool>) -> (MaskCenterSet, Var) {
    let v = tape.leaf(rows);
    let counts = present.iter().map(|&p| p as usize).collect();
    (
        MaskCenterSet {
            centers: v,
            present,
            counts,
        },
        v,
    )
}

fn lcl_value(rows: &Tensor<f64>, present: &[bool], bank: &MemoryBank, tau: f64) -> f64 {
    let mut tape = Tape::new();
    let (set, _) = center_set(&mut tape, rows.clone(), present.to_vec());
    let l = lcl_loss(&mut tape, &set, bank, tau).unwrap();
    tape.value(l).item()
}

fn lcl_oracle(rows: &Tensor<f64>, present: &[bool], bank: &MemoryBank, tau: f64) -> f64 {
    let k = bank.dim();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut total = 0.0;
    for c in 1..=bank.classes() {
        let positives = bank.buffer(c);
        if !present[c - 1] || positives.is_empty() {
            continue;
        }
        let m = &rows.data()[(c - 1) * k..c * k];
        let mut neg = 0.0;
        for other in (1..=bank.classes()).filter(|&o| o != c) {
            for v in bank.buffer(other) {
                neg += (cos(m, v) / tau).exp();
            }
        }
        let mut sum = 0.0;
        for v in positives {
            let e = (cos(m, v) / tau).exp();
            sum += -(e / (e + neg)).ln();
        }
        total += sum / positives.len() as f64;
    }
    total
}

#[test]
fn two_vector_hand_example() {
    let mut bank = MemoryBank::new(2, 2, 4);
    bank.push(&[Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0])]).unwrap();
    let rows = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let got = lcl_value(&rows, &[true, false], &bank, 1.0);
    let want = (1.0 + (-1.0f64).exp()).ln();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!((got - 0.31326).abs() < 5e-6);
}

#[test]
fn empty_bank_or_absent_classes_give_zero() {
    let bank = MemoryBank::new(3, 4, 8);
    let rows = Tensor::ones(vec![3, 4]);
    assert_eq!(lcl_value(&rows, &[true; 3], &bank, 0.1), 0.0);
    let mut bank = MemoryBank::new(3, 4, 8);
    bank.push(&[Some(vec![1.0; 4]), None, None]).unwrap();
    assert_eq!(lcl_value(&rows, &[false, true, true], &bank, 0.1), 0.0);
}

#[test]
fn zero_centers_have_no_direction() {
    let mut bank = MemoryBank::new(2, 2, 4);
    bank.push(&[Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0])]).unwrap();
    // class 2's center is all zero: skipped, class 1 contributes the hand value
    let rows = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let got = lcl_value(&rows, &[true, true], &bank, 1.0);
    assert!((got - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);

    // a zero vector pushed raw is ignored as a key
    bank.push(&[Some(vec![0.0, 0.0]), None]).unwrap();
    let again = lcl_value(&rows, &[true, true], &bank, 1.0);
    assert!((again - got).abs() < 1e-12);

    // push_centers drops directionless centers
    let mut tape = Tape::<f64>::new();
    let f = tape.constant(Tensor::zeros(vec![1, 2, 2, 2]));
    let sets = mask_centers(&mut tape, f, &[1, 1, 2, 2], 2).unwrap();
    let mut fresh = MemoryBank::new(2, 2, 4);
    fresh.push_centers(&tape, &sets[0]).unwrap();
    assert!(fresh.is_empty());
    assert!(!has_direction(&[0.0, 0.0]) && has_direction(&[0.0, 1.0]));
}

fn random_bank(per_class: usize, k: usize, rng: &mut impl Rng) -> MemoryBank {
    let mut bank = MemoryBank::new(3, k, 64);
    for _ in 0..per_class {
        let push: Vec<Option<Vec<f64>>> = (0..3).map(|_| Some((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect();
        bank.push(&push).unwrap();
    }
    bank
}

#[test]
fn matches_scalar_loop_oracle_and_gradient() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
        let bank = random_bank(4, 8, &mut rng);
        let rows = random(vec![3, 8], &mut rng);
        let present = [true, seed % 2 == 0, true];
        let got = lcl_value(&rows, &present, &bank, 0.1);
        let want = lcl_oracle(&rows, &present, &bank, 0.1);
        assert!((got - want).abs() <= 1e-6 * want.max(1.0), "seed {seed}: {got} vs {want}");

        let r = grad_check(
            |tape: &mut Tape<f64>, v: &[Var]| {
                let set = MaskCenterSet {
                    centers: v[0],
                    present: present.to_vec(),
                    counts: vec![1; 3],
                };
                lcl_loss(tape, &set, &bank, 0.1).map_err(tensor_err)
            },
            &[rows.clone()],
            FD_STEP,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-6, "seed {seed}: {r:?}");
    }
}

#[test]
fn bank_magnitudes_do_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let bank = random_bank(3, 5, &mut rng);
    let mut scaled = MemoryBank::new(3, 5, 64);
    for step in 0..3 {
        let push: Vec<Option<Vec<f64>>> =
            (1..=3).map(|c| Some(bank.buffer(c)[step].iter().map(|x| x * (c as f64 + 2.5)).collect())).collect();
        scaled.push(&push).unwrap();
    }
    let rows = random(vec![3, 5], &mut rng);
    let a = lcl_value(&rows, &[true; 3], &bank, 0.1);
    let b = lcl_value(&rows, &[true; 3], &scaled, 0.1);
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn moving_toward_positives_lowers_the_loss() {
    let mut bank = MemoryBank::new(2, 2, 4);
    bank.push(&[Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0])]).unwrap();
    let mut last = f64::INFINITY;
    for step in 0..=8 {
        // rotate from the negative toward the positive along the unit circle
        let theta = std::f64::consts::FRAC_PI_2 * (1.0 - step as f64 / 8.0);
        let rows = Tensor::new(vec![2, 2], vec![theta.cos(), theta.sin(), 1.0, 1.0]).unwrap();
        let l = lcl_value(&rows, &[true, false], &bank, 0.1);
        assert!(l < last, "step {step}: {l} !< {last}");
        last = l;
    }
}

#[test]
fn large_logits_stay_finite_and_bank_gets_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bank = random_bank(4, 6, &mut rng);
    let rows = random(vec![3, 6], &mut rng);
    let mut tape = Tape::new();
    let (set, v) = center_set(&mut tape, rows.clone(), vec![true; 3]);
    let l = lcl_loss(&mut tape, &set, &bank, 1e-3).unwrap();
    assert!(tape.value(l).item().is_finite());
    tape.backward(l).unwrap();
    assert!(tape.grad(v).unwrap().all_finite());
    for tau in [0.0, -0.1] {
        assert!(matches!(lcl_loss(&mut tape, &set, &bank, tau), Err(LossError::Temperature(_))));
    }
    let small = MemoryBank::new(3, 5, 4);
    assert!(matches!(lcl_loss(&mut tape, &set, &small, 0.1), Err(LossError::Dimension { .. })));
}
