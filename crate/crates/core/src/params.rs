//! Named parameter storage. Names are dot-separated module paths
//! (`ir.layer2.0.conv1.spatial.weight`) and double as checkpoint keys.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Trainable tensors receive gradients; buffers (running statistics) do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<S> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<S>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
    index: BTreeMap<String, usize>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, kind: ParamKind, tensor: Tensor<S>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let id = self.entries.len();
        self.entries.push(ParamEntry { name: name.to_string(), kind, tensor });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<S> {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<S>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Number of trainable scalars, optionally restricted to a name prefix.
    pub fn trainable_count(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable && e.name.starts_with(prefix))
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Overwrite a tensor by name; the shape must already match.
    pub fn assign(&mut self, name: &str, tensor: Tensor<S>) -> Result<()> {
        let id = self.find(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let slot = &mut self.entries[id.0].tensor;
        if slot.shape() != tensor.shape() {
            return Err(Error::Shape {
                op: "assign",
                detail: alloc::format!("`{name}`: stored {:?}, incoming {:?}", slot.shape(), tensor.shape()),
            });
        }
        *slot = tensor;
        Ok(())
    }
}
