use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Slot {
    value: Tensor,
    grad: Tensor,
}

/// Named trainable tensors with matching gradient buffers.
///
/// Names iterate in lexicographic order, which fixes the order of every
/// reduction that walks the store.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        value.check_finite(&name)?;
        let grad = Tensor::zeros(value.shape());
        self.slots.insert(name, Slot { value, grad });
        Ok(())
    }

    /// Registers a `fan_in × fan_out` matrix drawn from U(-1/√fan_in, 1/√fan_in).
    pub fn register_uniform(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound));
        self.register(name, t)
    }

    pub fn register_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<()> {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| Error::State(format!("unknown parameter {name:?}")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.grad)
            .ok_or_else(|| Error::State(format!("unknown parameter {name:?}")))
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("unknown parameter {name:?}")))?;
        if !slot.value.same_shape(&value) {
            return Err(Error::Dimension(format!(
                "parameter {name:?} has shape {:?}, got {:?}",
                slot.value.shape(),
                value.shape()
            )));
        }
        value.check_finite(name)?;
        slot.value = value;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("unknown parameter {name:?}")))?;
        if !slot.grad.same_shape(g) {
            return Err(Error::Dimension(format!(
                "gradient for {name:?} has shape {:?}, expected {:?}",
                g.shape(),
                slot.grad.shape()
            )));
        }
        slot.grad.add_assign(g);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.numel()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    /// FNV-1a over names and the raw bits of every value.
    pub fn checksum(&self) -> u64 {
        let mut h = crate::hash::Fnv64::new();
        for (name, slot) in &self.slots {
            h.write(name.as_bytes());
            for x in slot.value.data() {
                h.write(&x.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn max_abs_grad(&self) -> f64 {
        self.slots
            .values()
            .flat_map(|s| s.grad.data().iter())
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}
