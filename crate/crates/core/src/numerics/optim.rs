use serde::{Deserialize, Serialize};

use super::Tensor2;
use crate::error::{arg_err, dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor2,
    grad: Tensor2,
    first_moment: Tensor2,
    second_moment: Tensor2,
}

/// Named trainable tensors with their gradient accumulators and AdamW moments.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor2) -> Result<ParamId> {
        let name = name.into();
        if self.id(&name).is_some() {
            return arg_err(format!("duplicate parameter name {name}"));
        }
        let (r, c) = value.shape();
        self.params.push(Param {
            name,
            value,
            grad: Tensor2::zeros(r, c),
            first_moment: Tensor2::zeros(r, c),
            second_moment: Tensor2::zeros(r, c),
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor2) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.shape() != g.shape() {
            return dim_err(format!("gradient {:?} for parameter {} of {:?}", g.shape(), p.name, p.grad.shape()));
        }
        p.grad.add_assign(g)
    }

    /// Same as [`accumulate_grad`](Self::accumulate_grad) for bias vectors.
    pub fn accumulate_grad_slice(&mut self, id: ParamId, g: &[f64]) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.len() != g.len() {
            return dim_err(format!("gradient of {} for parameter {} of {}", g.len(), p.name, p.grad.len()));
        }
        p.grad.as_mut_slice().iter_mut().zip(g).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Flattened copy of every gradient, in registration order.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad.as_slice().iter().copied()).collect()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.as_slice().iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.scalar_count() {
            return dim_err(format!("{} values for {} parameters", values.len(), self.scalar_count()));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.as_mut_slice().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Adaptive moment estimation with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

impl AdamW {
    /// One update of every parameter in `store`, then zero the gradients.
    ///
    /// Nothing is modified if any gradient is non-finite; the error names
    /// the offending parameter.
    pub fn step(&self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if let Some(p) = store.params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {}", p.name)));
        }
        store.step += 1;
        let t = store.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - lr * self.weight_decay;
        for p in &mut store.params {
            let values = p.value.as_mut_slice();
            let grads = p.grad.as_slice();
            let m = p.first_moment.as_mut_slice();
            let v = p.second_moment.as_mut_slice();
            for i in 0..values.len() {
                let g = grads[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] = values[i] * decay - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }
}
