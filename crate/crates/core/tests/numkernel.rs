mod common;

use common::{check_op, naive_conv, project, random, rng};
use proptest::prelude::*;
use td3net::kernels::softmax_rows;
use td3net::{Padding, Tape, Tensor};

fn conv(x: &Tensor<f64>, w: &Tensor<f64>, dilation: usize, padding: Padding) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xi = tape.constant(x.clone()).unwrap();
    let wi = tape.constant(w.clone()).unwrap();
    let y = tape.conv1d(xi, wi, dilation, padding).unwrap();
    tape.value(y).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conv_matches_nested_loops(
        n in 1usize..3, c_in in 1usize..5, c_out in 1usize..5, t in 1usize..32,
        half_k in 0usize..3, dilation in 1usize..9, causal in any::<bool>(), seed in any::<u64>(),
    ) {
        let k = 2 * half_k + 1;
        let mut r = rng(seed);
        let x = random(&[n, c_in, t], &mut r);
        let w = random(&[c_out, c_in, k], &mut r);
        let padding = if causal { Padding::Causal } else { Padding::Same };
        let y = conv(&x, &w, dilation, padding);
        prop_assert_eq!(y.shape(), &[n, c_out, t]);
        prop_assert!(y.max_abs_diff(&naive_conv(&x, &w, dilation, causal)) < 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution(row in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax_rows(&row, row.len());
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn conv_reference_example() {
    let mut r = rng(7);
    let x = random(&[1, 3, 29], &mut r);
    let w = random(&[4, 3, 3], &mut r);
    assert!(conv(&x, &w, 2, Padding::Same).max_abs_diff(&naive_conv(&x, &w, 2, false)) < 1e-12);
}

#[test]
fn conv_rejects_bad_arguments() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 5])).unwrap();
    let w = tape.constant(Tensor::zeros(&[1, 3, 3])).unwrap();
    assert!(tape.conv1d(x, w, 1, Padding::Same).is_err());
    let w = tape.constant(Tensor::zeros(&[1, 2, 3])).unwrap();
    assert!(tape.conv1d(x, w, 0, Padding::Same).is_err());
    let even = tape.constant(Tensor::zeros(&[1, 2, 2])).unwrap();
    assert!(tape.conv1d(x, even, 1, Padding::Same).is_err());
}

fn bn_train(x: &Tensor<f64>, gamma: f64, beta: f64) -> Tensor<f64> {
    let c = x.shape()[1];
    let mut tape = Tape::new();
    let xi = tape.constant(x.clone()).unwrap();
    let g = tape.constant(Tensor::full(&[c], gamma)).unwrap();
    let b = tape.constant(Tensor::full(&[c], beta)).unwrap();
    let (y, _) = tape.batch_norm_train(xi, g, b, 1e-5).unwrap();
    tape.value(y).clone()
}

#[test]
fn bn_constant_channel_collapses_to_beta() {
    let y = bn_train(&Tensor::full(&[2, 3, 7], 4.2), 1.0, 0.0);
    assert!(y.data().iter().all(|&v| v.abs() < 1e-9));
}

#[test]
fn bn_train_standardizes_each_channel() {
    let x = random(&[4, 3, 29], &mut rng(3)).map(|v| 5.0 * v + 2.0);
    let y = bn_train(&x, 1.0, 0.0);
    for ch in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|b| y.data()[(b * 3 + ch) * 29..(b * 3 + ch + 1) * 29].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-10);
        // eps = 1e-5 shrinks the variance by var / (var + eps).
        let x_var = {
            let xs: Vec<f64> = (0..4).flat_map(|b| x.data()[(b * 3 + ch) * 29..(b * 3 + ch + 1) * 29].to_vec()).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / xs.len() as f64
        };
        assert!((var - x_var / (x_var + 1e-5)).abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-5);
    }
}

#[test]
fn bn_affine_composition() {
    let x = random(&[2, 4, 11], &mut rng(5));
    let z = bn_train(&x, 1.0, 0.0);
    let y = bn_train(&x, 2.0, 3.0);
    assert!(y.max_abs_diff(&z.map(|v| 2.0 * v + 3.0)) < 1e-12);
}

#[test]
fn bn_eval_is_pure() {
    let x = random(&[2, 3, 9], &mut rng(6));
    let run = || {
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone()).unwrap();
        let g = tape.constant(Tensor::full(&[3], 1.5)).unwrap();
        let b = tape.constant(Tensor::full(&[3], -0.5)).unwrap();
        let y = tape.batch_norm_eval(xi, g, b, &[0.1, 0.2, 0.3], &[1.0, 2.0, 0.5], 1e-5).unwrap();
        tape.value(y).clone()
    };
    let a = run();
    assert_eq!(a, run());
    let expected = (x.data()[0] - 0.1) / (1.0f64 + 1e-5).sqrt() * 1.5 - 0.5;
    assert!((a.data()[0] - expected).abs() < 1e-14);
}

#[test]
fn softmax_and_cross_entropy_examples() {
    let p = softmax_rows(&[0.0f64, 0.0, 0.0], 3);
    assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    let mut tape = Tape::new();
    let logits = tape.constant(Tensor::<f64>::from_f64(vec![1, 2], &[50.0, -50.0]).unwrap()).unwrap();
    let target = Tensor::from_f64(vec![1, 2], &[1.0, 0.0]).unwrap();
    let loss = tape.cross_entropy(logits, &target).unwrap();
    assert!(tape.value(loss).item() < 1e-40);
}

#[test]
fn dropout_extremes() {
    let x = random(&[2, 3, 5], &mut rng(8));
    let mut tape = Tape::new();
    let xi = tape.constant(x.clone()).unwrap();
    let y = tape.dropout(xi, 0.0, &mut rng(1)).unwrap();
    assert_eq!(tape.value(y), &x);
    assert!(tape.dropout(xi, 1.0, &mut rng(1)).is_err());
    assert!(tape.dropout(xi, -0.1, &mut rng(1)).is_err());
    let z = tape.dropout(xi, 0.5, &mut rng(1)).unwrap();
    for (a, b) in tape.value(z).data().iter().zip(x.data()) {
        assert!(*a == 0.0 || (*a - 2.0 * b).abs() < 1e-15);
    }
}

#[test]
fn relu_concat_add_pool_linear_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::<f64>::from_f64(vec![1, 1, 3], &[-1.0, 0.5, 2.0]).unwrap()).unwrap();
    let r = tape.relu(a).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.5, 2.0]);
    let c = tape.concat_channels(&[a, r]).unwrap();
    assert_eq!(tape.shape(c), &[1, 2, 3]);
    let s = tape.add(&[a, r]).unwrap();
    assert_eq!(tape.value(s).data(), &[-1.0, 1.0, 4.0]);
    let m = tape.mean_time(c).unwrap();
    let pooled = tape.value(m).data();
    assert!((pooled[0] - 0.5).abs() < 1e-15 && (pooled[1] - 2.5 / 3.0).abs() < 1e-15);
    let w = tape.constant(Tensor::from_f64(vec![3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
    let b = tape.constant(Tensor::from_f64(vec![3], &[0.0, 0.0, 1.0]).unwrap()).unwrap();
    let y = tape.linear(m, w, Some(b)).unwrap();
    assert_eq!(tape.shape(y), &[1, 3]);
    assert!((tape.value(y).data()[2] - (1.0 + 0.5 + 2.5 / 3.0)).abs() < 1e-15);
}

#[test]
fn gradients_of_every_operation() {
    let mut r = rng(11);
    let x = random(&[2, 3, 13], &mut r);
    let w = random(&[4, 3, 3], &mut r);
    for (dilation, padding) in [(1, Padding::Same), (3, Padding::Same), (2, Padding::Causal)] {
        let e = check_op(&[x.clone(), w.clone()], |t, ids| {
            let y = t.conv1d(ids[0], ids[1], dilation, padding).unwrap();
            project(t, y, 1)
        }, 2);
        assert!(e < 1e-5, "conv d={dilation}: {e}");
    }
    let g = random(&[3], &mut r);
    let b = random(&[3], &mut r);
    let e = check_op(&[x.clone(), g.clone(), b.clone()], |t, ids| {
        let (y, _) = t.batch_norm_train(ids[0], ids[1], ids[2], 1e-5).unwrap();
        project(t, y, 3)
    }, 4);
    assert!(e < 1e-5, "bn train: {e}");
    let e = check_op(&[x.clone(), g, b], |t, ids| {
        let y = t.batch_norm_eval(ids[0], ids[1], ids[2], &[0.1, -0.2, 0.3], &[0.5, 1.0, 2.0], 1e-5).unwrap();
        project(t, y, 5)
    }, 6);
    assert!(e < 1e-5, "bn eval: {e}");
    let e = check_op(std::slice::from_ref(&x), |t, ids| {
        let y = t.relu(ids[0]).unwrap();
        project(t, y, 7)
    }, 8);
    assert!(e < 1e-5, "relu: {e}");
    let x2 = random(&[2, 2, 13], &mut r);
    let e = check_op(&[x.clone(), x2.clone()], |t, ids| {
        let c = t.concat_channels(&[ids[0], ids[1]]).unwrap();
        let s = t.slice_channels(c, 1, 3).unwrap();
        let p = t.slice_channels(c, 0, 3).unwrap();
        let a = t.add(&[s, p]).unwrap();
        project(t, a, 9)
    }, 10);
    assert!(e < 1e-5, "concat/slice/add: {e}");
    let lw = random(&[5, 3], &mut r);
    let lb = random(&[5], &mut r);
    let target = Tensor::from_f64(vec![2, 5], &[0.2, 0.0, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let e = check_op(&[x.clone(), lw, lb], |t, ids| {
        let m = t.mean_time(ids[0]).unwrap();
        let y = t.linear(m, ids[1], Some(ids[2])).unwrap();
        t.cross_entropy(y, &target).unwrap()
    }, 12);
    assert!(e < 1e-5, "pool/linear/cross-entropy: {e}");
    let e = check_op(std::slice::from_ref(&x), |t, ids| {
        let y = t.dropout(ids[0], 0.3, &mut rng(99)).unwrap();
        project(t, y, 13)
    }, 14);
    assert!(e < 1e-5, "dropout: {e}");
}

#[test]
fn backward_contract() {
    let mut tape = Tape::new();
    let w = tape.variable(Tensor::<f64>::from_f64(vec![3], &[0.3, -1.0, 2.0]).unwrap()).unwrap();
    let x = Tensor::from_f64(vec![3], &[1.5, 2.5, -0.5]).unwrap();
    let xc = tape.constant(x.clone()).unwrap();
    let m = tape.mul(w, xc).unwrap();
    let loss = tape.sum(m).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.node(w).unwrap(), &x);
    assert!(tape.backward(loss).is_err());
}
