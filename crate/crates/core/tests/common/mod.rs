#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use td3net::{NodeId, Tape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct-definition dilated convolution of `[N, C_in, T]` by `[C_out, C_in, K]`.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, dilation: usize, causal: bool) -> Tensor<f64> {
    let (n, c_in, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let left = if causal { (k - 1) * dilation } else { (k - 1) * dilation / 2 };
    let mut y = vec![0.0; n * c_out * t];
    for b in 0..n {
        for o in 0..c_out {
            for tau in 0..t {
                let mut acc = 0.0;
                for i in 0..c_in {
                    for j in 0..k {
                        let pos = tau as isize + (j * dilation) as isize - left as isize;
                        if pos >= 0 && (pos as usize) < t {
                            acc += w.data()[(o * c_in + i) * k + j] * x.data()[(b * c_in + i) * t + pos as usize];
                        }
                    }
                }
                y[(b * c_out + o) * t + tau] = acc;
            }
        }
    }
    Tensor::new(vec![n, c_out, t], y).unwrap()
}

/// `|a - n| / max(|a|, |n|)`, with both-tiny pairs compared absolutely.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-9 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Coordinates to probe in a tensor of `len` elements: all of them when
/// there are at most `count`, otherwise `count` distinct random picks.
pub fn coordinates(len: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    rand::seq::index::sample(rng, len, count).into_vec()
}

/// Central-difference check of `build` with respect to each of `inputs`.
/// `build` turns leaf nodes into a scalar. Returns the worst relative error.
pub fn check_op(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[NodeId]) -> NodeId, seed: u64) -> f64 {
    let eval = |vals: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| tape.constant(v.clone()).unwrap()).collect();
        let out = build(&mut tape, &ids);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|v| tape.variable(v.clone()).unwrap()).collect();
    let out = build(&mut tape, &ids);
    let grads = tape.backward(out).unwrap();
    let mut r = rng(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let g = grads.node(ids[k]).expect("gradient for variable");
        for c in coordinates(input.len(), 10, &mut r) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[c] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[c] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(rel_error(g.data()[c], numeric));
        }
    }
    worst
}

/// Reduces any tensor node to a scalar through a fixed random projection.
pub fn project(tape: &mut Tape<f64>, node: NodeId, seed: u64) -> NodeId {
    let shape = tape.shape(node).to_vec();
    let r = random(&shape, &mut rng(seed));
    let r = tape.constant(r).unwrap();
    let m = tape.mul(node, r).unwrap();
    tape.sum(m).unwrap()
}

use td3net::layers::{Ctx, Mode, ParamStore};
use td3net::Padding;

/// Worst central-difference relative error per parameter tensor of `store`
/// for the scalar produced by `f` in train mode (batch statistics, no
/// dropout randomness).
pub fn store_grad_errors(
    store: &ParamStore<f64>,
    padding: Padding,
    f: &dyn Fn(&mut Ctx<'_, f64>) -> NodeId,
    per_tensor: usize,
    seed: u64,
) -> Vec<(String, usize, f64)> {
    let eval = |s: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, s, Mode::Train, padding);
        let out = f(&mut ctx);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let out = {
        let mut ctx = Ctx::new(&mut tape, store, Mode::Train, padding);
        f(&mut ctx)
    };
    let grads = tape.backward(out).unwrap();
    let mut r = rng(seed);
    let h = 1e-5;
    let mut report = Vec::new();
    for (i, p) in store.params().iter().enumerate() {
        let g = grads.param(td3net::ParamId(i)).expect("gradient for every parameter");
        let coords = coordinates(p.value.len(), per_tensor, &mut r);
        let mut worst: f64 = 0.0;
        for &c in &coords {
            let mut plus = store.clone();
            plus.params_mut()[i].value.data_mut()[c] += h;
            let mut minus = store.clone();
            minus.params_mut()[i].value.data_mut()[c] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(rel_error(g.data()[c], numeric));
        }
        report.push((p.name.clone(), coords.len(), worst));
    }
    report
}
