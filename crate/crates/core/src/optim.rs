//! Adam optimizer with global-norm gradient clipping.

use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 clip applied to the gradient before the update; 0 disables.
    pub grad_clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 5.0,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = (0..store.len())
            .map(|s| Tensor::zeros(store.tensor(s).shape()))
            .collect();
        let v = (0..store.len())
            .map(|s| Tensor::zeros(store.tensor(s).shape()))
            .collect();
        Adam { cfg, m, v, t: 0 }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        assert_eq!(grads.n_slots(), store.len());
        self.t += 1;
        let scale = {
            let norm = grads.global_norm();
            if self.cfg.grad_clip > 0.0 && norm > self.cfg.grad_clip {
                self.cfg.grad_clip / norm
            } else {
                1.0
            }
        };
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for slot in 0..store.len() {
            let Some(g) = grads.get(slot) else { continue };
            let m = self.m[slot].as_mut_slice();
            let v = self.v[slot].as_mut_slice();
            let p = store.tensor_mut(slot).as_mut_slice();
            for i in 0..p.len() {
                let gi = g.as_slice()[i] * scale;
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * gi;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        // f(x) = sum x^2, gradient 2x.
        let mut store = ParamStore::new();
        store.insert("x", Tensor::from_vec(&[3], vec![5.0, -3.0, 2.0]));
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &store);
        for _ in 0..3000 {
            let mut grads = Gradients::empty(1);
            let g = store.tensor(0).map(|v| 2.0 * v);
            grads.accumulate(0, &g);
            adam.step(&mut store, &grads);
        }
        for &x in store.tensor(0).as_slice() {
            assert!(x.abs() < 1e-3, "did not converge: {x}");
        }
    }

    #[test]
    fn clipping_bounds_first_update() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::from_vec(&[1], vec![0.0]));
        let cfg = AdamConfig {
            grad_clip: 1.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &store);
        let mut grads = Gradients::empty(1);
        grads.accumulate(0, &Tensor::from_vec(&[1], vec![1e9]));
        adam.step(&mut store, &grads);
        // First Adam step size is at most lr regardless of magnitude.
        assert!(store.tensor(0).as_slice()[0].abs() <= cfg.learning_rate * 1.001);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut store = ParamStore::new();
            store.insert("x", Tensor::from_vec(&[2], vec![1.0, -1.0]));
            let mut adam = Adam::new(AdamConfig::default(), &store);
            for step in 0..10 {
                let mut grads = Gradients::empty(1);
                let g = store.tensor(0).map(|v| v * (step as f64 + 0.5));
                grads.accumulate(0, &g);
                adam.step(&mut store, &grads);
            }
            store
                .tensor(0)
                .as_slice()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
