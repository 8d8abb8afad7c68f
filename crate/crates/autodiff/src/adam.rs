use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

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

/// Moment estimates for every parameter of one store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.tensor.shape()))
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.tensors.len() != store.len() || state.first.len() != store.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "adam_step",
            lhs: vec![store.len()],
            rhs: vec![grads.tensors.len()],
        });
    }
    for ((p, g), m) in store.params_mut().iter().zip(&grads.tensors).zip(&state.first) {
        if p.tensor.shape() != g.shape() || p.tensor.shape() != m.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                lhs: p.tensor.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let params = store.params_mut();
    for (i, p) in params.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let g = grads.tensors[i].data();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        let w = p.tensor.data_mut();
        for j in 0..w.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
