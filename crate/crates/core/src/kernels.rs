//! Raw numeric kernels over flat row-major buffers.
//!
//! Activations are laid out `[N, C, T]` (batch, channel, time). The tape in
//! [`crate::tape`] wraps these with shape checks and backward rules.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Temporal zero-padding scheme for a convolution. Both keep the output
/// length equal to the input length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// `(K-1)*d/2` zeros on each side; requires an odd kernel.
    #[default]
    Same,
    /// `(K-1)*d` zeros on the left only.
    Causal,
}

impl Padding {
    /// Input offset read by tap `j` of a `kernel`-wide filter at dilation `dilation`,
    /// relative to the output index.
    #[inline]
    pub fn tap_offset(self, j: usize, kernel: usize, dilation: usize) -> isize {
        let j = j as isize;
        let k = kernel as isize;
        let d = dilation as isize;
        match self {
            Padding::Same => (j - (k - 1) / 2) * d,
            Padding::Causal => (j - (k - 1)) * d,
        }
    }
}

/// Output index range `lo..hi` for which `t + offset` stays inside `[0, len)`.
#[inline]
pub(crate) fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub padding: Padding,
}

pub(crate) fn conv1d_forward<S: Scalar>(x: &[S], w: &[S], dims: ConvDims, out: &mut [S]) {
    let ConvDims { batch, c_in, c_out, len, kernel, dilation, padding } = dims;
    for b in 0..batch {
        for co in 0..c_out {
            let y = &mut out[(b * c_out + co) * len..][..len];
            for ci in 0..c_in {
                let xs = &x[(b * c_in + ci) * len..][..len];
                let ws = &w[(co * c_in + ci) * kernel..][..kernel];
                for (j, &wv) in ws.iter().enumerate() {
                    let off = padding.tap_offset(j, kernel, dilation);
                    let (lo, hi) = valid_range(len, off);
                    if lo >= hi {
                        continue;
                    }
                    let src = &xs[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (yv, &xv) in y[lo..hi].iter_mut().zip(src) {
                        *yv = *yv + wv * xv;
                    }
                }
            }
        }
    }
}

/// Accumulates input and weight gradients of a convolution.
pub(crate) fn conv1d_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    gy: &[S],
    dims: ConvDims,
    gx: Option<&mut [S]>,
    gw: Option<&mut [S]>,
) {
    let ConvDims { batch, c_in, c_out, len, kernel, dilation, padding } = dims;
    if let Some(gx) = gx {
        for b in 0..batch {
            for co in 0..c_out {
                let g = &gy[(b * c_out + co) * len..][..len];
                for ci in 0..c_in {
                    let dst = &mut gx[(b * c_in + ci) * len..][..len];
                    let ws = &w[(co * c_in + ci) * kernel..][..kernel];
                    for (j, &wv) in ws.iter().enumerate() {
                        let off = padding.tap_offset(j, kernel, dilation);
                        let (lo, hi) = valid_range(len, off);
                        if lo >= hi {
                            continue;
                        }
                        let d = &mut dst[(lo as isize + off) as usize..(hi as isize + off) as usize];
                        for (dv, &gv) in d.iter_mut().zip(&g[lo..hi]) {
                            *dv = *dv + wv * gv;
                        }
                    }
                }
            }
        }
    }
    if let Some(gw) = gw {
        for b in 0..batch {
            for co in 0..c_out {
                let g = &gy[(b * c_out + co) * len..][..len];
                for ci in 0..c_in {
                    let xs = &x[(b * c_in + ci) * len..][..len];
                    let gws = &mut gw[(co * c_in + ci) * kernel..][..kernel];
                    for (j, gwv) in gws.iter_mut().enumerate() {
                        let off = padding.tap_offset(j, kernel, dilation);
                        let (lo, hi) = valid_range(len, off);
                        if lo >= hi {
                            continue;
                        }
                        let src = &xs[(lo as isize + off) as usize..(hi as isize + off) as usize];
                        let acc = g[lo..hi]
                            .iter()
                            .zip(src)
                            .fold(S::zero(), |a, (&gv, &xv)| a + gv * xv);
                        *gwv = *gwv + acc;
                    }
                }
            }
        }
    }
}

/// Per-channel mean and biased variance over batch and time.
pub(crate) fn channel_moments<S: Scalar>(x: &[S], batch: usize, ch: usize, len: usize) -> (Vec<S>, Vec<S>) {
    let m = S::of((batch * len) as f64);
    let mut mean = vec![S::zero(); ch];
    let mut var = vec![S::zero(); ch];
    for c in 0..ch {
        let mut s = S::zero();
        for b in 0..batch {
            for &v in &x[(b * ch + c) * len..][..len] {
                s = s + v;
            }
        }
        let mu = s / m;
        let mut q = S::zero();
        for b in 0..batch {
            for &v in &x[(b * ch + c) * len..][..len] {
                q = q + (v - mu) * (v - mu);
            }
        }
        mean[c] = mu;
        var[c] = q / m;
    }
    (mean, var)
}

/// Numerically stable row-wise softmax of a `[rows, cols]` buffer.
pub fn softmax_rows<S: Scalar>(logits: &[S], cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); logits.len()];
    for (row, dst) in logits.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut z = S::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            z = z + *d;
        }
        for d in dst.iter_mut() {
            *d = *d / z;
        }
    }
    out
}

/// Row-wise log-softmax.
pub(crate) fn log_softmax_rows<S: Scalar>(logits: &[S], cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); logits.len()];
    for (row, dst) in logits.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = row.iter().fold(S::zero(), |a, &v| a + (v - max).exp()).ln() + max;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = v - lse;
        }
    }
    out
}
