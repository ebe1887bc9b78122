use serde::{Deserialize, Serialize};

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

struct Param {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named trainable tensors plus their AdamW moment buffers.
#[derive(Default)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

/// Graph leaves for every parameter of a store, valid for one graph.
pub struct Bindings {
    vars: Vec<Var>,
}

impl Bindings {
    /// Wraps leaves created elsewhere, in parameter declaration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bindings { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// AdamW hyperparameters. Weight decay is decoupled from the adaptive step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 5e-4,
            weight_decay: 1e-7,
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

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let n = value.numel();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    /// Replaces every value from a `(name, tensor)` list with matching names
    /// and shapes.
    pub fn load(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model has {}",
                entries.len(),
                self.params.len()
            )));
        }
        for (p, (name, t)) in self.params.iter_mut().zip(entries) {
            if p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor `{name}` {:?} does not match `{}` {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = t;
        }
        Ok(())
    }

    /// Places every parameter on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Bindings {
        Bindings {
            vars: self
                .params
                .iter()
                .map(|p| g.input(p.value.clone(), requires_grad))
                .collect(),
        }
    }

    /// Adds the gradients collected on `g` into the store.
    pub fn accumulate_grads(&mut self, g: &Graph, b: &Bindings) {
        for (p, &var) in self.params.iter_mut().zip(&b.vars) {
            if let Some(gr) = g.grad(var) {
                p.grad.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in self.params.iter_mut() {
                p.grad.iter_mut().for_each(|g| *g *= s);
            }
        }
    }

    /// One AdamW update with bias correction using the stored gradients.
    pub fn adamw_step(&mut self, opt: &AdamW) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        for p in self.params.iter_mut() {
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let g = p.grad[i];
                p.m[i] = opt.beta1 * p.m[i] + (1.0 - opt.beta1) * g;
                p.v[i] = opt.beta2 * p.v[i] + (1.0 - opt.beta2) * g * g;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                w[i] *= 1.0 - opt.lr * opt.weight_decay;
                w[i] -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
            }
        }
    }
}
