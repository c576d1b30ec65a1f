use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};

/// Stochastic gradient descent with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Option<Vec<f64>>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Updates every parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.velocity.resize(store.len(), None);
        for id in store.ids() {
            let Some(g) = grads.get(id) else { continue };
            let v = self.velocity[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
            let p = store.get_mut(id).data_mut();
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub params: AdamParams,
    t: i32,
    m: Vec<Option<Vec<f64>>>,
    v: Vec<Option<Vec<f64>>>,
}

impl Adam {
    pub fn new(params: AdamParams) -> Self {
        Self {
            params,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        let AdamParams {
            lr,
            beta1,
            beta2,
            eps,
        } = self.params;
        self.t = self.t.saturating_add(1);
        self.m.resize(store.len(), None);
        self.v.resize(store.len(), None);
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for id in store.ids() {
            let Some(g) = grads.get(id) else { continue };
            let m = self.m[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}
