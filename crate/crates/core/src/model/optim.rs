use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamStore};
use crate::error::{Error, Result};

/// Piecewise-constant step size: `base · factor^(milestones passed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base: f64,
    /// Epoch indices (0-based) at which the step size is multiplied by `factor`.
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            milestones: Vec::new(),
            factor: 1.0,
        }
    }

    pub fn at_epoch(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * self.factor.powi(passed as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(Error::config(format!("step size {} must be positive", self.base)));
        }
        if !(self.factor > 0.0 && self.factor.is_finite()) {
            return Err(Error::config(format!("decay factor {} must be positive", self.factor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.tensors().iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        Self {
            cfg,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Stochastic gradient descent with classical momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    velocity: Vec<Array2<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, params: &ParamStore) -> Self {
        Self {
            momentum,
            velocity: params.tensors().iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        let mu = self.momentum;
        for ((p, g), vel) in params.tensors_mut().iter_mut().zip(grads.iter()).zip(self.velocity.iter_mut()) {
            ndarray::Zip::from(p).and(g).and(vel).for_each(|p, &g, vel| {
                *vel = mu * *vel + g;
                *p -= lr * *vel;
            });
        }
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_drops_at_milestones() {
        let s = LrSchedule {
            base: 1e-2,
            milestones: vec![20, 25],
            factor: 0.1,
        };
        assert_eq!(s.at_epoch(0), 1e-2);
        assert_eq!(s.at_epoch(19), 1e-2);
        assert!((s.at_epoch(20) - 1e-3).abs() < 1e-15);
        assert!((s.at_epoch(29) - 1e-4).abs() < 1e-16);
    }

    fn quadratic_grads(store: &ParamStore) -> ParamGrads {
        // loss = sum (p - 3)^2
        let mut g = ParamGrads::zeros_like(store);
        g.accumulate(0, &store.tensors()[0].mapv(|p| 2.0 * (p - 3.0)));
        g
    }

    #[test]
    fn optimisers_minimise_a_quadratic() {
        let mut store = ParamStore::default();
        store.push("p", Array2::zeros((2, 2)));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..2000 {
            let g = quadratic_grads(&store);
            adam.step(&mut store, &g, 1e-2);
        }
        assert!(store.tensors()[0].iter().all(|p| (p - 3.0).abs() < 1e-3));

        let mut store2 = ParamStore::default();
        store2.push("p", Array2::zeros((1, 3)));
        let mut sgd = Sgd::new(0.9, &store2);
        for _ in 0..500 {
            let g = quadratic_grads(&store2);
            sgd.step(&mut store2, &g, 1e-2);
        }
        assert!(store2.tensors()[0].iter().all(|p| (p - 3.0).abs() < 1e-6));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut store = ParamStore::default();
        store.push("p", Array2::from_elem((1, 4), 10.0));
        let mut g = quadratic_grads(&store);
        let before = clip_grad_norm(&mut g, 1.0);
        assert!(before > 1.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
