use crate::error::{invalid, Result};
use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Momentum SGD with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub cfg: SgdConfig,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(cfg: SgdConfig) -> Result<Self> {
        if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", cfg.lr)));
        }
        if !(0.0..1.0).contains(&cfg.momentum) || cfg.weight_decay < 0.0 {
            return Err(invalid("momentum must lie in [0,1) and weight decay must be non-negative"));
        }
        Ok(Sgd {
            cfg,
            velocity: Vec::new(),
        })
    }

    /// `v = m*v + (g + wd*w); w -= lr*v`, then clears every gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        let (lr, m, wd) = (lit::<T>(self.cfg.lr), lit::<T>(self.cfg.momentum), lit::<T>(self.cfg.weight_decay));
        self.velocity.resize(store.len(), None);
        for id in store.trainable_ids() {
            let grad = store.grad(id).clone();
            let vel = self.velocity[id.index()].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            for ((v, &gr), &w) in vel.data_mut().iter_mut().zip(grad.data()).zip(store.value(id).data()) {
                *v = m * *v + (gr + wd * w);
            }
            let vel = vel.clone();
            for (w, &v) in store.value_mut(id).data_mut().iter_mut().zip(vel.data()) {
                *w -= lr * v;
            }
        }
        store.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar_store(w: f64) -> (ParamStore<f64>, crate::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w), true).unwrap();
        (s, id)
    }

    #[test]
    fn single_plain_step() {
        let (mut s, id) = scalar_store(1.0);
        s.set_grad(id, Tensor::scalar(1.0)).unwrap();
        let mut opt = Sgd::new(SgdConfig {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        })
        .unwrap();
        opt.step(&mut s);
        assert!((s.value(id).data()[0] - 0.9).abs() < 1e-15);
        assert_eq!(s.grad(id).data()[0], 0.0);
    }

    #[test]
    fn zero_gradients_without_decay_change_nothing() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::<f64>::full(Shape::new(1, 2, 3, 3), 0.7), true).unwrap();
        let mut opt = Sgd::new(SgdConfig {
            weight_decay: 0.0,
            ..SgdConfig::default()
        })
        .unwrap();
        opt.step(&mut s);
        opt.step(&mut s);
        assert!(s.value(id).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn momentum_matches_hand_recursion() {
        let (mut s, id) = scalar_store(2.0);
        let mut opt = Sgd::new(SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        })
        .unwrap();
        let (g1, g2) = (0.5, -0.25);
        s.set_grad(id, Tensor::scalar(g1)).unwrap();
        opt.step(&mut s);
        s.set_grad(id, Tensor::scalar(g2)).unwrap();
        opt.step(&mut s);
        let v1 = g1;
        let v2 = 0.9 * v1 + g2;
        let expected = 2.0 - 0.1 * v1 - 0.1 * v2;
        assert_eq!(s.value(id).data()[0], expected);
    }

    #[test]
    fn rejects_bad_learning_rate() {
        for lr in [0.0, -0.1, f64::NAN] {
            assert!(Sgd::<f64>::new(SgdConfig {
                lr,
                ..SgdConfig::default()
            })
            .is_err());
        }
    }
}
