use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ndmath::{BatchStats, Graph, NdArray, Var, BN_MOMENTUM};
use crate::scalar::Scalar;

/// Index of an entry in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: NdArray<T>,
    pub trainable: bool,
}

/// Ordered name → array map holding weights and batch-norm buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: NdArray<T>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Build(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry { name: name.to_string(), value, trainable });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &NdArray<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut NdArray<T> {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&NdArray<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut NdArray<T>> {
        self.id(name).map(|id| &mut self.entries[id.0].value)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.entries.len()).filter(|&i| self.entries[i].trainable).map(ParamId).collect()
    }

    /// Mutable views of the trainable entries, in `trainable_ids` order.
    pub fn trainable_mut(&mut self) -> Vec<&mut NdArray<T>> {
        self.entries.iter_mut().filter(|e| e.trainable).map(|e| &mut e.value).collect()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Register every entry on `g`; trainable ones track gradients when `track`.
    pub fn bind<'a>(&'a self, g: &mut Graph<T>, track: bool) -> Bound<'a, T> {
        let vars = self.entries.iter().map(|e| g.leaf(e.value.clone(), track && e.trainable)).collect();
        Bound { store: self, vars }
    }

    /// Fold train-mode batch statistics into running statistics. A stats tag
    /// is the id of the running mean; the running variance follows it.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats<T>]) {
        let m = T::lit(BN_MOMENTUM);
        for s in stats {
            for (slot, new) in [(s.tag, &s.mean), (s.tag + 1, &s.var)] {
                for (r, &v) in self.entries[slot].value.data_mut().iter_mut().zip(new) {
                    *r = (T::one() - m) * *r + m * v;
                }
            }
        }
    }

    /// Convert every entry to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), value: e.value.cast(), trainable: e.trainable })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Layer name of an entry: everything before the last `.`.
    pub fn layer_of(name: &str) -> &str {
        name.rsplit_once('.').map(|(l, _)| l).unwrap_or(name)
    }
}

/// A [`ParamStore`] registered on a graph.
pub struct Bound<'a, T> {
    pub store: &'a ParamStore<T>,
    pub vars: Vec<Var>,
}

impl<T: Scalar> Bound<'_, T> {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[T] {
        self.store.get(id).data()
    }
}
