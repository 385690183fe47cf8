use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam moments for every parameter in a store.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Result<Self> {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = config;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config(format!(
                "Adam betas must lie in [0, 1), got {beta1} and {beta2}"
            )));
        }
        if eps <= 0.0 || lr < 0.0 || !lr.is_finite() {
            return Err(Error::Config(format!("invalid Adam lr {lr} / eps {eps}")));
        }
        let zeros = || -> Vec<Tensor> {
            store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).shape()))
                .collect()
        };
        Ok(Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Frozen parameters keep their values.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            if self.m[id.index()].shape() != store.value(id).shape() {
                return Err(Error::Config(format!(
                    "optimizer state for {} has shape {:?}, parameter has {:?}",
                    store.name(id),
                    self.m[id.index()].shape(),
                    store.value(id).shape()
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for id in store.ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let grad = store.grad(id).data().to_vec();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = store.value_mut(id).data_mut();
            for k in 0..p.len() {
                let g = grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Rescales trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the factor applied (1 when no clipping happened).
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store
        .ids()
        .filter(|&id| store.is_trainable(id))
        .map(|id| store.grad(id).sq_norm())
        .sum::<f64>()
        .sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let factor = max_norm / norm;
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        store.grad_mut(id).data_mut().iter_mut().for_each(|g| *g *= factor);
    }
    factor
}
