//! Named parameter storage shared by the model, optimizer, and checkpoints.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`]. Stable for the lifetime of the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Trainable entries receive gradients and optimizer updates; buffers
    /// (e.g. running batch-norm statistics) do not.
    pub trainable: bool,
}

/// Ordered collection of named tensors. Registration order is the
/// serialization order, which keeps checkpoints byte-stable.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let mut tensor = tensor;
        tensor.requires_grad = trainable;
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.iter_mut() {
            e.tensor.zero_grad();
        }
    }

    /// Copies tensor values from `other`, matching entries by name.
    /// Every entry of `self` must be present in `other` with the same shape.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for e in self.entries.iter_mut() {
            let src = other
                .find(&e.name)
                .map(|id| other.tensor(id))
                .ok_or_else(|| Error::invalid(format!("missing parameter {}", e.name)))?;
            if src.shape() != e.tensor.shape() {
                return Err(Error::shape(format!(
                    "parameter {}: expected {:?}, got {:?}",
                    e.name,
                    e.tensor.shape(),
                    src.shape()
                )));
            }
            e.tensor.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Deterministic digest of the trainable parameter values, used by tests
    /// to verify which partitions an update touched.
    pub fn checksum(&self, ids: &[ParamId]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for &id in ids {
            for &v in self.tensor(id).data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_and_lookup() {
        let mut store = ParamStore::new();
        let a = store.add("w", Tensor::zeros(&[2, 2]), true);
        let b = store.add("b", Tensor::zeros(&[2]), true);
        assert_ne!(a, b);
        assert_eq!(store.find("w"), Some(a));
        assert_eq!(store.find("missing"), None);
        assert!(store.tensor(a).requires_grad);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_panic() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[1]), true);
        store.add("w", Tensor::zeros(&[1]), true);
    }

    #[test]
    fn checksum_changes_with_values() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[3]), true);
        let before = store.checksum(&[id]);
        store.tensor_mut(id).data_mut()[1] = 1.0;
        assert_ne!(before, store.checksum(&[id]));
    }
}
