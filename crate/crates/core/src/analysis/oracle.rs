//! Gradient-connectivity oracle for receptive fields.
//!
//! The network is linearized (positive weights, batch norm and ReLU
//! replaced by the identity, dropout off) so that a nonzero gradient of an
//! activation with respect to an input position exactly marks a path
//! between them. This runs the real forward and backward code and shares
//! nothing with the symbolic propagation in [`super::rf`].

use crate::error::{Error, Result};
use crate::layers::{Ctx, Mode};
use crate::model::Network;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Copy of `net` with every weight made strictly positive.
pub fn linearized(net: &Network<f64>) -> Network<f64> {
    net.map_params(|name, v| if name.ends_with(".weight") { v.abs() + 0.5 } else { v })
}

/// Input indices with a nonzero gradient for every time index of `path`,
/// computed on an already linearized network in one batched pass: batch
/// item `t` seeds the cotangent only at time `t`.
pub fn gradient_rf_all(lin: &Network<f64>, path: &str, seq_len: usize) -> Result<Vec<Vec<usize>>> {
    if seq_len == 0 {
        return Err(Error::usage("sequence length must be at least 1"));
    }
    let channels = lin.config.in_channels;
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, lin.store(), Mode::Linear, lin.config.padding).with_trace();
    let input = ctx.tape.variable(Tensor::full(&[seq_len, channels, seq_len], 1.0))?;
    lin.forward(&mut ctx, input)?;
    let trace = ctx.take_trace();
    let node = trace
        .iter()
        .find(|(p, _)| p == path)
        .map(|&(_, n)| n)
        .ok_or_else(|| Error::usage(format!("unknown layer path `{path}`")))?;
    let shape = tape.shape(node).to_vec();
    let (width, len) = (shape[1], shape[2]);
    let mut seed = Tensor::zeros(&shape);
    for t in 0..seq_len {
        for c in 0..width {
            seed.data_mut()[(t * width + c) * len + t] = 1.0;
        }
    }
    let grads = tape.backward_with_seed(node, seed)?;
    let gin = match grads.node(input) {
        Some(g) => g.data().to_vec(),
        None => vec![0.0; seq_len * channels * seq_len],
    };
    Ok((0..seq_len)
        .map(|t| {
            (0..seq_len)
                .filter(|&s| (0..channels).any(|c| gin[(t * channels + c) * seq_len + s] != 0.0))
                .collect()
        })
        .collect())
}

/// Input indices whose gradient with respect to the activation
/// `path` at `time` is nonzero in some channel.
pub fn gradient_rf_oracle(net: &Network<f64>, path: &str, time: usize) -> Result<Vec<usize>> {
    let seq_len = net.config.seq_len;
    if time >= seq_len {
        return Err(Error::usage(format!("time index {time} outside 0..{seq_len}")));
    }
    let lin = linearized(net);
    Ok(gradient_rf_all(&lin, path, seq_len)?.swap_remove(time))
}
