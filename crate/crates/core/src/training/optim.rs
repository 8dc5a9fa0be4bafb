use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::scalar::Scalar;
use crate::tape::ParamId;
use crate::tensor::Tensor;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(store: &ParamStore<S>, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<S>> = store.params().iter().map(|p| vec![S::zero(); p.value.len()]).collect();
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies one update. `grads` may list any subset of parameters; the
    /// rest see a zero gradient. Nothing is modified if a gradient is
    /// non-finite.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &[(ParamId, Tensor<S>)], lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate {lr} must be finite and non-negative")));
        }
        let mut dense: Vec<Option<&Tensor<S>>> = vec![None; store.params().len()];
        for (id, g) in grads {
            let p = store.get(*id);
            if g.shape() != p.value.shape() {
                return Err(Error::config(format!("gradient shape mismatch for {}", p.name)));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite { scope: p.name.clone(), detail: "gradient at optimizer step".into() });
            }
            dense[id.0] = Some(g);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let decay = S::of(1.0 - lr * self.weight_decay);
        let lr_s = S::of(lr);
        let (c1, c2, eps) = (S::of(1.0 / bc1), S::of(1.0 / bc2), S::of(self.eps));
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let g = dense[i].map(|g| g.data());
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(S::zero(), |g| g[j]);
                m[j] = b1 * m[j] + (S::one() - b1) * gj;
                v[j] = b2 * v[j] + (S::one() - b2) * gj * gj;
                let mhat = m[j] * c1;
                let vhat = v[j] * c2;
                *w = *w * decay - lr_s * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<S: Scalar>(grads: &mut [(ParamId, Tensor<S>)], max_norm: f64) -> f64 {
    let total: f64 = grads.iter().flat_map(|(_, g)| g.data()).map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
    if total > max_norm && total > 0.0 {
        let s = S::of(max_norm / total);
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w".into(), Tensor::from_f64(vec![values.len()], values).unwrap());
        s
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut s = store(&[2.0, -4.0]);
        let mut opt = AdamW::new(&s, 0.01);
        opt.step(&mut s, &[(ParamId(0), Tensor::zeros(&[2]))], 0.1).unwrap();
        let w = s.params()[0].value.data();
        assert!((w[0] - 2.0 * 0.999).abs() < 1e-15);
        assert!((w[1] + 4.0 * 0.999).abs() < 1e-15);
        assert_eq!(opt.m[0], vec![0.0, 0.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(&[1.0]);
        let mut opt = AdamW::new(&s, 0.0);
        opt.step(&mut s, &[(ParamId(0), Tensor::scalar(1.0))], 0.1).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.params()[0].value.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut s = store(&[0.3, 0.7]);
        let before = s.clone();
        let mut opt = AdamW::new(&s, 0.01);
        let g = Tensor::from_f64(vec![2], &[5.0, -3.0]).unwrap();
        opt.step(&mut s, &[(ParamId(0), g)], 0.0).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = store(&[1.0]);
        let before = s.clone();
        let mut opt = AdamW::new(&s, 0.0);
        let err = opt.step(&mut s, &[(ParamId(0), Tensor::scalar(f64::NAN))], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(s, before);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut s = store(&[1.0, 2.0]);
            let mut opt = AdamW::new(&s, 0.01);
            for i in 0..5 {
                let g = Tensor::from_f64(vec![2], &[i as f64 * 0.3, -1.0]).unwrap();
                opt.step(&mut s, &[(ParamId(0), g)], 0.05).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![(ParamId(0), Tensor::<f64>::from_f64(vec![2], &[3.0, 4.0]).unwrap())];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].1.data()[0] - 0.6).abs() < 1e-15);
    }
}
