use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// A trainable tensor with its first and second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Named parameters plus optimizer state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    pub seed: u64,
    /// Optimizer steps taken.
    pub step: u64,
    pub params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let n = value.len();
        self.params.insert(
            name.to_string(),
            Param {
                value,
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn init_glorot<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.init_uniform(name, shape, limit, rng);
    }

    pub fn init_uniform<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], limit: f64, rng: &mut R) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
        self.insert(
            name,
            Tensor {
                shape: shape.to_vec(),
                data,
            },
        );
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) {
        self.insert(name, Tensor::filled(shape, value));
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update. Parameters without a gradient entry are left alone.
    pub fn step(&self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<(), NnError> {
        for (name, g) in grads {
            let p = store
                .params
                .get(name)
                .ok_or_else(|| NnError::UnknownParam(name.clone()))?;
            if p.value.len() != g.len() {
                return Err(NnError::Shape(format!(
                    "gradient for `{name}` has {} values, parameter has {}",
                    g.len(),
                    p.value.len()
                )));
            }
        }
        store.step += 1;
        let t = store.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = store.params.get_mut(name).expect("checked above");
            for i in 0..g.len() {
                let gi = g.data[i];
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * gi;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = p.m[i] / c1;
                let vhat = p.v[i] / c2;
                p.value.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
