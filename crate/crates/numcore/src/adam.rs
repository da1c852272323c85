//! Adam with bias correction.

use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::tape::ParamGrads;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| t.zeros_like()).collect();
        Self {
            config,
            second: zeros.clone(),
            first: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.second[i]
    }

    /// One update. Parameters missing from `grads` are treated as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(NumError::Invalid(format!(
                "optimizer tracks {} tensors, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for (id, g) in &grads.0 {
            let p = store.try_get(*id)?;
            if p.shape() != g.shape() {
                return Err(NumError::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let g = grads.get(id);
            let m = self.first[id.0].data_mut();
            let v = self.second[id.0].data_mut();
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |g| g.data()[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                p[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamId;
    use std::collections::BTreeMap;

    fn single(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w));
        s
    }

    fn grad(g: f64) -> ParamGrads {
        ParamGrads(BTreeMap::from([(ParamId(0), Tensor::scalar(g))]))
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut store = single(1.5);
        let mut adam = AdamState::new(&store, AdamConfig::with_lr(0.1));
        adam.step(&mut store, &grad(0.0)).unwrap();
        assert_eq!(store.get(ParamId(0)).item(), 1.5);
        assert_eq!(adam.first_moment(0).item(), 0.0);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_against_gradient_by_lr() {
        for g in [3.0, -0.02] {
            let mut store = single(0.0);
            let mut adam = AdamState::new(&store, AdamConfig::with_lr(1e-3));
            adam.step(&mut store, &grad(g)).unwrap();
            let w = store.get(ParamId(0)).item();
            assert_eq!(w.signum(), -g.signum());
            assert!((w.abs() - 1e-3).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut store = single(0.0);
        let mut adam = AdamState::new(&store, AdamConfig::with_lr(1e-3));
        let bad = ParamGrads(BTreeMap::from([(ParamId(0), Tensor::zeros(1, 2))]));
        assert!(matches!(adam.step(&mut store, &bad), Err(NumError::Shape { .. })));
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn converges_on_shifted_quadratic_like_scalar_recurrence() {
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let mut store = single(0.0);
        let mut adam = AdamState::new(&store, AdamConfig::with_lr(lr));
        // independent scalar recurrence
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=200 {
            let g = 2.0 * (w - 2.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);

            let cur = store.get(ParamId(0)).item();
            adam.step(&mut store, &grad(2.0 * (cur - 2.0))).unwrap();
        }
        let got = store.get(ParamId(0)).item();
        assert!((got - w).abs() < 1e-12, "{got} vs oracle {w}");
        assert!((got - 2.0).abs() < 0.05, "w = {got}");
    }
}
