use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter in its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    /// Adam first and second moments.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Counted by the L2 regularizer (weights yes, biases no).
    pub decay: bool,
}

/// Named trainable tensors with gradients and optimizer state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
    /// Adam steps taken.
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter {name:?}"
            )));
        }
        let n = value.len();
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            decay,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grads(&mut self, s: f64) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }

    /// One bias-corrected Adam update; gradients are cleared afterwards.
    /// A non-finite gradient aborts the step and leaves everything intact.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for p in &self.params {
            if let Some(k) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at index {k}",
                    p.name
                )));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - cfg.beta1.powf(t);
        let c2 = 1.0 - cfg.beta2.powf(t);
        for p in &mut self.params {
            let value = p.value.data_mut();
            for k in 0..value.len() {
                let g = p.grad[k];
                p.m[k] = cfg.beta1 * p.m[k] + (1.0 - cfg.beta1) * g;
                p.v[k] = cfg.beta2 * p.v[k] + (1.0 - cfg.beta2) * g * g;
                let m_hat = p.m[k] / c1;
                let v_hat = p.v[k] / c2;
                value[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                p.grad[k] = 0.0;
            }
        }
        Ok(())
    }
}
