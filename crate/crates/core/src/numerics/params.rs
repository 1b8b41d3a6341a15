use std::collections::BTreeMap;

use crate::error::{MilError, Result};
use crate::numerics::Tensor;

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named trainable parameters, iterated in sorted name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    slots: BTreeMap<String, ParamSlot>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(MilError::Config(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.slots.insert(name, ParamSlot { value, grad });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn slot(&self, name: &str) -> Result<&ParamSlot> {
        self.slots
            .get(name)
            .ok_or_else(|| MilError::Config(format!("unknown parameter {name}")))
    }

    pub fn slot_mut(&mut self, name: &str) -> Result<&mut ParamSlot> {
        self.slots
            .get_mut(name)
            .ok_or_else(|| MilError::Config(format!("unknown parameter {name}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.slot(name).map(|s| &s.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.slot(name).map(|s| &s.grad)
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.slot_mut(name)?;
        if slot.value.shape() != value.shape() {
            return Err(MilError::Shape {
                op: "set_value",
                left: slot.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        slot.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamSlot)> {
        self.slots.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamSlot)> {
        self.slots.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.data_mut().fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, grad: &Tensor) {
        if let Some(slot) = self.slots.get_mut(name) {
            slot.grad.add_assign(grad);
        }
    }
}
