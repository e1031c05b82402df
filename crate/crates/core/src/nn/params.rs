use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{ensure, Error, Result};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to one trainable array inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Adam first moment.
    pub m: Tensor,
    /// Adam second moment.
    pub v: Tensor,
}

/// Named trainable arrays with gradient slots and optimizer moments.
///
/// Entries keep insertion order, which is also the serialization order.
#[derive(Debug)]
pub struct ParameterStore {
    id: u64,
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

impl Default for ParameterStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParameterStore {
    /// Clones get a fresh identity, so gradients recorded against the
    /// original never flow into the copy.
    fn clone(&self) -> Self {
        Self {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            entries: self.entries.clone(),
            index: self.index.clone(),
        }
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub(crate) fn store_id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        ensure!(
            !self.index.contains_key(&name),
            Error::InvalidArgument(format!("duplicate parameter name '{name}'"))
        );
        let shape = value.shape().to_vec();
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
        });
        Ok(ParamId(id))
    }

    /// Adds a parameter drawn uniformly from `[-scale, scale]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.grad.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    /// Sets every parameter value to zero (handy for analytic tests).
    pub fn zero_values(&mut self) {
        for e in &mut self.entries {
            e.value.fill(0.0);
        }
    }

    /// Copies values (and optionally optimizer moments) from another store
    /// with the same layout.
    pub fn load_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        ensure!(
            other.entries.len() == self.entries.len(),
            Error::Shape("parameter store layouts differ".into())
        );
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            ensure!(
                dst.name == src.name && dst.value.shape() == src.value.shape(),
                Error::Shape(format!("parameter '{}' does not match '{}'", dst.name, src.name))
            );
            dst.value = src.value.clone();
            dst.m = src.m.clone();
            dst.v = src.v.clone();
        }
        Ok(())
    }
}

/// Bias-corrected Adam with optional global gradient-norm clipping.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
            step: 0,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Returns the pre-clipping global gradient norm.
    pub fn step(&mut self, store: &mut ParameterStore) -> f64 {
        self.step += 1;
        let norm = store.grad_norm();
        let clip = match self.clip_norm {
            Some(max) if norm > max && norm.is_finite() => max / norm,
            _ => 1.0,
        };
        adam_update(store, self.lr, self.beta1, self.beta2, self.eps, self.step, clip);
        norm
    }
}

/// One bias-corrected Adam update at 1-based `step_index`; gradients are
/// scaled by `grad_scale` before use and zeroed afterwards.
pub fn adam_update(
    store: &mut ParameterStore,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_index: u64,
    grad_scale: f64,
) {
    let t = step_index.max(1) as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for e in &mut store.entries {
        let g = e.grad.data();
        let m = e.m.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi * grad_scale;
        }
        let v = e.v.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            let gs = gi * grad_scale;
            *vi = beta2 * *vi + (1.0 - beta2) * gs * gs;
        }
        let (m, v) = (e.m.data(), e.v.data());
        for ((p, mi), vi) in e.value.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        e.grad.fill(0.0);
    }
}
