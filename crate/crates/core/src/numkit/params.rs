use serde::{Deserialize, Serialize};

use super::Tensor2;
use crate::error::{Error, Result};

/// Index of a registered parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors with one gradient accumulator each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamTape {
    names: Vec<String>,
    values: Vec<Tensor2>,
    grads: Vec<Tensor2>,
}

impl ParamTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor2) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::InvalidArgument(format!("parameter `{name}` registered twice")));
        }
        let (r, c) = value.shape();
        self.names.push(name);
        self.values.push(value);
        self.grads.push(Tensor2::zeros(r, c));
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor2::len).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.grads[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor2> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }
}
