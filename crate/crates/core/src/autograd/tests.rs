use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

use super::gradcheck::{max_relative_error as max_rel_error, numeric_gradients};

fn random_store(shapes: &[(&str, &[usize])], seed: u64) -> (ParamStore, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let ids = shapes
        .iter()
        .map(|(n, s)| params.insert_uniform(*n, s, 1.0, &mut rng))
        .collect();
    (params, ids)
}

#[test]
fn affine_identity_and_bias_passthrough() {
    let params = ParamStore::new();
    let mut tape = Tape::new(&params);
    let x = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = tape.constant(Tensor::identity(2));
    let y = tape.affine(x, w, None).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

    let z = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
    let w = tape.constant(Tensor::matrix(2, 2, vec![3.0, -1.0, 2.0, 8.0]).unwrap());
    let b = tape.constant(Tensor::vector(vec![5.0, 7.0]));
    let y = tape.affine(z, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 2]);
    assert_eq!(tape.value(y).data(), &[5.0, 7.0]);
}

#[test]
fn affine_reports_both_shapes() {
    let params = ParamStore::new();
    let mut tape = Tape::new(&params);
    let x = tape.constant(Tensor::zeros(&[2, 3]));
    let w = tape.constant(Tensor::zeros(&[2, 2]));
    let err = tape.affine(x, w, None).unwrap_err();
    assert_eq!(
        err,
        AutogradError::ShapeMismatch {
            op: "affine",
            left: vec![2, 3],
            right: vec![2, 2]
        }
    );
}

#[test]
fn affine_gradient_matches_finite_differences() {
    let (params, ids) = random_store(&[("x", &[3, 4]), ("w", &[4, 2]), ("b", &[2])], 1);
    let build = |t: &mut Tape| {
        let x = t.param(ids[0]);
        let w = t.param(ids[1]);
        let b = t.param(ids[2]);
        let y = t.affine(x, w, Some(b)).unwrap();
        t.sum(y)
    };
    assert!(max_rel_error(&params, &build) < 1e-6);
}

#[test]
fn activation_origin_values_and_ranges() {
    let params = ParamStore::new();
    let mut tape = Tape::new(&params);
    let x = tape.constant(Tensor::vector(vec![0.0, -800.0, 800.0, 3.0]));
    let t = tape.tanh(x);
    let s = tape.sigmoid(x);
    assert_eq!(tape.value(t).data()[0], 0.0);
    assert_eq!(tape.value(s).data()[0], 0.5);
    assert!(tape.value(s).is_finite());
    assert!(tape.value(t).data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(tape.value(s).data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn activation_gradients_match_finite_differences() {
    let (params, ids) = random_store(&[("x", &[5])], 2);
    for kind in [Activation::Tanh, Activation::Sigmoid] {
        let build = |t: &mut Tape| {
            let x = t.param(ids[0]);
            let y = t.elementwise(x, kind);
            let y2 = t.mul(y, x).unwrap();
            t.sum(y2)
        };
        assert!(max_rel_error(&params, &build) < 1e-6, "{kind:?}");
    }
}

#[test]
fn masked_softmax_examples() {
    let params = ParamStore::new();
    let mut tape = Tape::new(&params);
    let u = tape.constant(Tensor::vector(vec![0.0, 0.0]));
    let a = tape.masked_softmax(u, &[true, true]).unwrap();
    assert_eq!(tape.value(a).data(), &[0.5, 0.5]);

    let u = tape.constant(Tensor::vector(vec![9.0, 3.0]));
    let a = tape.masked_softmax(u, &[true, false]).unwrap();
    assert_eq!(tape.value(a).data(), &[1.0, 0.0]);

    let u = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let a = tape.masked_softmax(u, &[true; 3]).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (i, v) in [1.0f64, 2.0, 3.0].iter().enumerate() {
        assert!((tape.value(a).data()[i] - v.exp() / z).abs() < 1e-12);
    }

    let u = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    assert_eq!(tape.masked_softmax(u, &[false, false]), Err(AutogradError::EmptyMask));
}

#[test]
fn masked_softmax_gradient_ignores_masked_positions() {
    let (params, ids) = random_store(&[("u", &[5]), ("w", &[5])], 3);
    let mask = [true, false, true, true, false];
    let build = |t: &mut Tape| {
        let u = t.param(ids[0]);
        let w = t.param(ids[1]);
        let a = t.masked_softmax(u, &mask).unwrap();
        let aw = t.mul(a, w).unwrap();
        t.sum(aw)
    };
    assert!(max_rel_error(&params, &build) < 1e-6);
    let mut tape = Tape::new(&params);
    let out = build(&mut tape);
    let g = tape.backward(out).unwrap();
    assert_eq!(g.get(ids[0]).data()[1], 0.0);
    assert_eq!(g.get(ids[0]).data()[4], 0.0);
}

#[test]
fn embedding_lookup_reads_row_or_zeros() {
    let mut params = ParamStore::new();
    let mut table = Tensor::zeros(&[5, 3]);
    table.row_mut(3).copy_from_slice(&[1.0, 2.0, 3.0]);
    let id = params.insert("E", table);
    let mut tape = Tape::new(&params);
    let e = tape.param(id);
    let row = tape.embedding_lookup(e, 3, false).unwrap();
    assert_eq!(tape.value(row).data(), &[1.0, 2.0, 3.0]);
    let zero = tape.embedding_lookup(e, 3, true).unwrap();
    assert_eq!(tape.value(zero).data(), &[0.0; 3]);
    assert!(matches!(
        tape.embedding_lookup(e, 5, false),
        Err(AutogradError::IndexOutOfRange { index: 5, len: 5, .. })
    ));
}

#[test]
fn embedding_lookup_gradient_hits_selected_row_only() {
    let (params, ids) = random_store(&[("E", &[4, 3])], 4);
    let build = |t: &mut Tape| {
        let e = t.param(ids[0]);
        let r = t.embedding_lookup(e, 2, false).unwrap();
        t.sum(r)
    };
    let mut tape = Tape::new(&params);
    let out = build(&mut tape);
    let g = tape.backward(out).unwrap();
    let numeric = numeric_gradients(&params, &build);
    for row in 0..4 {
        for col in 0..3 {
            let expected = if row == 2 { 1.0 } else { 0.0 };
            let idx = row * 3 + col;
            assert_eq!(g.get(ids[0]).data()[idx], expected);
            assert!((numeric[0][idx] - expected).abs() < 1e-8);
        }
    }

    let zeroed = |t: &mut Tape| {
        let e = t.param(ids[0]);
        let r = t.embedding_lookup(e, 2, true).unwrap();
        t.sum(r)
    };
    let mut tape = Tape::new(&params);
    let out = zeroed(&mut tape);
    assert_eq!(tape.backward(out).unwrap().global_norm(), 0.0);
}

#[test]
fn lstm_zero_network_gives_zero_states() {
    let mut params = ParamStore::new();
    let w = params.insert("w", Tensor::zeros(&[3 + 2, 8]));
    let b = params.insert("b", Tensor::zeros(&[8]));
    let mut tape = Tape::new(&params);
    let x = tape.constant(Tensor::zeros(&[3]));
    let h = tape.constant(Tensor::zeros(&[2]));
    let c = tape.constant(Tensor::zeros(&[2]));
    let (wv, bv) = (tape.param(w), tape.param(b));
    let (h1, c1) = lstm_cell(&mut tape, x, h, c, wv, bv).unwrap();
    assert_eq!(tape.value(h1).data(), &[0.0, 0.0]);
    assert_eq!(tape.value(c1).data(), &[0.0, 0.0]);

    let bad = tape.constant(Tensor::zeros(&[4]));
    assert!(lstm_cell(&mut tape, bad, h, c, wv, bv).is_err());
}

#[test]
fn lstm_gradients_match_finite_differences() {
    let (params, ids) = random_store(
        &[("x", &[3]), ("h", &[4]), ("c", &[4]), ("w", &[7, 16]), ("b", &[16])],
        5,
    );
    let build = |t: &mut Tape| {
        let [x, h, c, w, b] = [0, 1, 2, 3, 4].map(|i| t.param(ids[i]));
        let (h1, c1) = lstm_cell(t, x, h, c, w, b).unwrap();
        let (h2, _) = lstm_cell(t, x, h1, c1, w, b).unwrap();
        t.sum(h2)
    };
    assert!(max_rel_error(&params, &build) < 1e-5);
}

#[test]
fn cross_entropy_examples() {
    let params = ParamStore::new();
    let mut tape = Tape::new(&params);
    let p = tape.constant(Tensor::vector(vec![1.0, 0.0]));
    let l = tape.cross_entropy(p, 0).unwrap();
    assert_eq!(tape.scalar(l), 0.0);
    let l = tape.cross_entropy(p, 1).unwrap();
    assert!((tape.scalar(l) - (-PROB_FLOOR.ln())).abs() < 1e-12);

    let p = tape.constant(Tensor::vector(vec![0.5, 0.5]));
    let l = tape.cross_entropy(p, 1).unwrap();
    assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-9);
    assert!(tape.cross_entropy(p, 2).is_err());

    let not_dist = tape.constant(Tensor::vector(vec![0.5, 0.9]));
    assert!(tape.cross_entropy(not_dist, 0).is_err());
}

#[test]
fn cross_entropy_logit_gradient_is_probs_minus_one_hot() {
    let (params, ids) = random_store(&[("z", &[4])], 6);
    let gold = 2;
    let build = |t: &mut Tape| {
        let z = t.param(ids[0]);
        let p = t.masked_softmax(z, &[true; 4]).unwrap();
        t.cross_entropy(p, gold).unwrap()
    };
    let numeric = numeric_gradients(&params, &build);
    let mut tape = Tape::new(&params);
    let out = build(&mut tape);
    let g = tape.backward(out).unwrap();
    let z = params.get(ids[0]).data();
    let total: f64 = z.iter().map(|v| v.exp()).sum();
    for i in 0..4 {
        let expected = z[i].exp() / total - if i == gold { 1.0 } else { 0.0 };
        assert!((numeric[0][i] - expected).abs() < 1e-8);
        assert!((g.get(ids[0]).data()[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn backward_identity_and_disconnected() {
    let mut params = ParamStore::new();
    let p = params.insert("p", Tensor::scalar(3.0));
    let q = params.insert("q", Tensor::scalar(4.0));
    let mut tape = Tape::new(&params);
    let pv = tape.param(p);
    let g = tape.backward(pv).unwrap();
    assert_eq!(g.get(p).data(), &[1.0]);
    assert_eq!(g.get(q).data(), &[0.0]);

    let mut tape = Tape::new(&params);
    let _ = tape.param(p);
    let c = tape.constant(Tensor::scalar(2.0));
    let g = tape.backward(c).unwrap();
    assert_eq!(g.get(p).data(), &[0.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut params = ParamStore::new();
    let p = params.insert("p", Tensor::vector(vec![1.0, 2.0]));
    let mut tape = Tape::new(&params);
    let pv = tape.param(p);
    assert!(matches!(tape.backward(pv), Err(AutogradError::NonScalarLoss { .. })));
}

#[test]
fn repeated_construction_is_bit_identical() {
    let (params, ids) = random_store(&[("x", &[6]), ("w", &[6, 3]), ("v", &[3, 1])], 7);
    let build = |t: &mut Tape| {
        let x = t.param(ids[0]);
        let w = t.param(ids[1]);
        let v = t.param(ids[2]);
        let h = t.affine(x, w, None).unwrap();
        let h = t.tanh(h);
        let s = t.affine(h, v, None).unwrap();
        t.sum(s)
    };
    let run = || {
        let mut tape = Tape::new(&params);
        let out = build(&mut tape);
        (tape.scalar(out).to_bits(), tape.backward(out).unwrap())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
    let mut tape = Tape::new(&params);
    let out = build(&mut tape);
    assert_eq!(tape.backward(out).unwrap(), tape.backward(out).unwrap());
}

#[test]
fn structural_ops_gradients() {
    let (params, ids) = random_store(&[("a", &[3]), ("b", &[3]), ("m", &[2, 3])], 8);
    let build = |t: &mut Tape| {
        let a = t.param(ids[0]);
        let b = t.param(ids[1]);
        let m = t.param(ids[2]);
        let ab = t.concat(&[a, b]).unwrap();
        let tail = t.slice(ab, 2, 3).unwrap();
        let rows = t.stack_rows(&[a, tail]).unwrap();
        let shifted = t.add_rows(rows, b).unwrap();
        let prod = t.mul(shifted, m).unwrap();
        let flat = t.reshape(prod, &[6]).unwrap();
        let masked = t.mul_const(flat, vec![2.0, 0.0, 1.0, 1.0, 0.5, 1.0]).unwrap();
        let scaled = t.scale(masked, -1.5);
        let sq = t.mul(scaled, scaled).unwrap();
        t.sum(sq)
    };
    assert!(max_rel_error(&params, &build) < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn masked_softmax_is_normalized(
        values in proptest::collection::vec(-50.0f64..50.0, 1..12),
        mask_bits in any::<u16>(),
    ) {
        let n = values.len();
        let mut mask: Vec<bool> = (0..n).map(|i| mask_bits & (1 << i) != 0).collect();
        mask[mask_bits as usize % n] = true;
        let params = ParamStore::new();
        let mut tape = Tape::new(&params);
        let u = tape.constant(Tensor::vector(values));
        let a = tape.masked_softmax(u, &mask).unwrap();
        let out = tape.value(a).data();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (p, ok) in out.iter().zip(&mask) {
            prop_assert!(*p >= 0.0);
            if !ok {
                prop_assert_eq!(*p, 0.0);
            }
        }
    }

    #[test]
    fn random_composites_pass_gradient_check(
        m in 1usize..4, k in 1usize..5, n in 1usize..5, seed in 0u64..1000,
    ) {
        let (params, ids) = random_store(&[("x", &[m, k]), ("w", &[k, n]), ("b", &[n]), ("v", &[n, 1])], seed);
        let build = |t: &mut Tape| {
            let x = t.param(ids[0]);
            let w = t.param(ids[1]);
            let b = t.param(ids[2]);
            let v = t.param(ids[3]);
            let h = t.affine(x, w, Some(b)).unwrap();
            let h = t.tanh(h);
            let s = t.affine(h, v, None).unwrap();
            let s = t.reshape(s, &[m]).unwrap();
            let s = t.sigmoid(s);
            let p = t.masked_softmax(s, &vec![true; m]).unwrap();
            t.cross_entropy(p, 0).unwrap()
        };
        prop_assert!(max_rel_error(&params, &build) < 1e-4);
    }
}
