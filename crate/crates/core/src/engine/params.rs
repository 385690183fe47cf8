use std::collections::BTreeMap;

use rand::Rng;

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    name: String,
    value: Tensor,
    grad: Tensor,
    trainable: bool,
}

/// Named parameters with same-shape gradient accumulators.
///
/// Iteration order is insertion order, which keeps optimizer updates and
/// serialization deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    slots: Vec<Slot>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.slots.len());
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.clone(), id);
        self.slots.push(Slot {
            name,
            value,
            grad,
            trainable: true,
        });
        Ok(id)
    }

    /// Adds a parameter initialised uniformly in `[-scale, scale]`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let mut t = Tensor::zeros(shape);
        if scale > 0.0 {
            for x in t.data_mut() {
                *x = rng.random_range(-scale..=scale);
            }
        }
        self.insert(name, t)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].value
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(self.value(self.id(name)?))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let id = self.id(name)?;
        Ok(self.value_mut(id))
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name)?;
        let slot = &mut self.slots[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::Config(format!(
                "parameter {name} has shape {:?}, got {:?}",
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.slots[id.0].trainable
    }

    /// Frozen parameters are skipped by the optimizer.
    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let id = self.id(name)?;
        self.slots[id.0].trainable = trainable;
        Ok(())
    }

    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.iter() {
            let slot = self
                .slots
                .get_mut(id.0)
                .ok_or_else(|| Error::Internal(format!("gradient for unknown parameter {}", id.0)))?;
            if g.len() != slot.grad.len() {
                return Err(Error::Internal(format!(
                    "gradient for {} has {} entries, expected {}",
                    slot.name,
                    g.len(),
                    slot.grad.len()
                )));
            }
            for (a, b) in slot.grad.data_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().all(|s| s.value.is_finite())
    }

    /// Copies values (not gradients) from another store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.slots.len() != other.slots.len() {
            return Err(Error::Config("parameter stores have different layouts".into()));
        }
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {} does not match {}",
                    a.name, b.name
                )));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }
}
