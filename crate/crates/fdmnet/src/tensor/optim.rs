//! Classical SGD with momentum and L2 weight decay.

use super::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Per-parameter momentum buffers are created lazily and persist across
/// steps. Update rule, matching the usual convention:
/// `g' = g + weight_decay * p; v = momentum * v + g'; p -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<f64>>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Applies one update to the listed parameters. Every listed parameter
    /// must be trainable and carry a gradient.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            if self.velocity.len() <= id.0 {
                self.velocity.resize(id.0 + 1, None);
            }
            let entry = store.get_mut(id);
            if !entry.trainable {
                return Err(Error::invalid(format!(
                    "cannot step non-trainable buffer {}",
                    entry.name
                )));
            }
            let grad = entry.tensor.grad.as_deref().ok_or_else(|| {
                Error::invalid(format!("missing gradient for parameter {}", entry.name))
            })?;
            let n = entry.tensor.numel();
            let v = self.velocity[id.0].get_or_insert_with(|| vec![0.0; n]);
            debug_assert_eq!(v.len(), n);
            let data = entry.tensor.data.as_mut_slice();
            for j in 0..n {
                let g = grad[j] + self.weight_decay * data[j];
                v[j] = self.momentum * v[j] + g;
                data[j] -= self.lr * v[j];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn momentum_accumulates_over_steps() {
        // constant gradient g: first step moves by lr*g, second by lr*1.9*g
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::new(vec![1], vec![1.0]).unwrap(), true);
        let mut opt = Sgd::new(0.1, 0.9, 0.0);

        store.tensor_mut(p).accumulate_grad(&[2.0]);
        opt.step(&mut store, &[p]).unwrap();
        assert!((store.tensor(p).data()[0] - (1.0 - 0.1 * 2.0)).abs() < 1e-15);

        store.zero_grads();
        store.tensor_mut(p).accumulate_grad(&[2.0]);
        opt.step(&mut store, &[p]).unwrap();
        let want = 1.0 - 0.1 * 2.0 - 0.1 * (0.9 * 2.0 + 2.0);
        assert!((store.tensor(p).data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::new(vec![1], vec![4.0]).unwrap(), true);
        let mut opt = Sgd::new(0.5, 0.0, 0.1);
        store.tensor_mut(p).accumulate_grad(&[0.0]);
        opt.step(&mut store, &[p]).unwrap();
        // g' = 0 + 0.1*4 = 0.4; p = 4 - 0.5*0.4
        assert!((store.tensor(p).data()[0] - 3.8).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::zeros(&[2]), true);
        let mut opt = Sgd::new(0.1, 0.9, 0.0);
        assert!(opt.step(&mut store, &[p]).is_err());
    }
}
