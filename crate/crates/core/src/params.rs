//! Named parameter storage shared by every executor.

use std::collections::{BTreeMap, HashMap};

use crate::error::TensorError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer; counted by `count_params`.
    Trainable,
    /// State such as batch-norm running statistics; saved, never counted.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub kind: ParamKind,
}

/// Gradients keyed by parameter, as produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    pub(crate) fn add(&mut self, id: ParamId, g: Vec<f64>) {
        match self.map.get_mut(&id) {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => {
                self.map.insert(id, g);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.map.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.map.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Running-statistic replacement produced by a training-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StatUpdate {
    pub id: ParamId,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, kind: ParamKind) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::invalid("params", format!("duplicate parameter name {name:?}")));
        }
        let tensor = tensor.with_requires_grad(kind == ParamKind::Trainable);
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, tensor, kind });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == ParamKind::Trainable)
            .map(|(i, _)| ParamId(i))
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Adds a backward pass's gradients into each parameter's gradient slot.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.iter() {
            self.entries[id.0].tensor.accumulate_grad(g);
        }
    }

    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate]) {
        for u in updates {
            self.entries[u.id.0].tensor.data_mut().copy_from_slice(&u.values);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::zeros(&[2]), ParamKind::Trainable).unwrap();
        assert!(s.add("a.weight", Tensor::zeros(&[2]), ParamKind::Buffer).is_err());
        let id = s.add("a.running_mean", Tensor::zeros(&[3]), ParamKind::Buffer).unwrap();
        assert_eq!(s.id("a.running_mean"), Some(id));
        assert_eq!(s.trainable_count(), 2);
        assert!(s.get(s.id("a.weight").unwrap()).requires_grad());
        assert!(!s.get(id).requires_grad());
    }
}
