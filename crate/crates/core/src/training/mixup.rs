use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Draws the interpolation weight from `Beta(alpha, alpha)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("mixup alpha {alpha} must be positive to sample")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::config(e.to_string()))?;
    Ok(beta.sample(rng))
}

/// `lambda * row_i + (1 - lambda) * row_perm(i)` along the leading axis.
pub fn mix_rows<S: Scalar>(t: &Tensor<S>, perm: &[usize], lambda: f64) -> Tensor<S> {
    let n = t.shape()[0];
    assert_eq!(perm.len(), n, "permutation length");
    let row = t.len() / n.max(1);
    let a = S::of(lambda);
    let b = S::one() - a;
    let src = t.data();
    let mut out = Vec::with_capacity(t.len());
    for (i, &j) in perm.iter().enumerate() {
        let (ri, rj) = (&src[i * row..(i + 1) * row], &src[j * row..(j + 1) * row]);
        out.extend(ri.iter().zip(rj).map(|(&u, &v)| a * u + b * v));
    }
    Tensor::new(t.shape().to_vec(), out).expect("same shape")
}

/// Mixes a batch with a fixed weight and pairing.
pub fn mixup_with_lambda<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, lambda: f64, perm: &[usize]) -> (Tensor<S>, Tensor<S>) {
    (mix_rows(x, perm, lambda), mix_rows(y, perm, lambda))
}

/// Batch-level mixup. Returns the mixed inputs and targets together with
/// the weight used; `alpha = 0` leaves the batch untouched.
pub fn mixup<S: Scalar, R: Rng + ?Sized>(
    x: &Tensor<S>,
    y: &Tensor<S>,
    alpha: f64,
    rng: &mut R,
) -> Result<(Tensor<S>, Tensor<S>, f64)> {
    if alpha < 0.0 || alpha.is_nan() {
        return Err(Error::config(format!("mixup alpha {alpha} must be non-negative")));
    }
    if x.shape()[0] != y.shape()[0] {
        return Err(Error::config("inputs and targets disagree on batch size"));
    }
    if alpha == 0.0 {
        return Ok((x.clone(), y.clone(), 1.0));
    }
    let lambda = sample_lambda(alpha, rng)?;
    let mut perm: Vec<usize> = (0..x.shape()[0]).collect();
    perm.shuffle(rng);
    let (xm, ym) = mixup_with_lambda(x, y, lambda, &perm);
    Ok((xm, ym, lambda))
}
