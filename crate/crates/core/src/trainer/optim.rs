use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tensor};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr_generator: 2e-4, lr_discriminator: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment slots for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.entries().iter().map(|e| Tensor::zeros(&e.value.shape)).collect();
        Adam { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One bias-corrected step over `ids`; a missing gradient counts as zero.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId], grads: &[Option<Tensor>], lr: f64, cfg: &AdamConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for &id in ids {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = store.get_mut(id);
            let g = grads[id.0].as_ref();
            for k in 0..p.data.len() {
                let gk = g.map_or(0.0, |g| g.data[k]);
                m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * gk;
                v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * gk * gk;
                let mh = m.data[k] / c1;
                let vh = v.data[k] / c2;
                p.data[k] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }
}
