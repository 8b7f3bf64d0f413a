use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Trainable parameters receive gradients; buffers (BN running stats) do not.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub kind: EntryKind,
    pub value: Tensor<f32>,
}

/// Ordered, uniquely named tensors of a network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: EntryKind, value: Tensor<f32>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, kind, value });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &Entry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<f32> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<f32> {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids of trainable parameters, in insertion order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.entries[id.0].kind == EntryKind::Param).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.param_ids().iter().map(|&id| self.value(id).numel()).sum()
    }

    /// Replaces every value from `other`, which must have identical names,
    /// kinds and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(Error::Validation(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            if mine.name != theirs.name || mine.kind != theirs.kind || mine.value.shape() != theirs.value.shape() {
                return Err(Error::Validation(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }
}

/// Creates named, initialized parameters.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self { store, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Kaiming-normal (fan-in, ReLU gain) F×C×k×k weight.
    pub fn conv_weight(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<ParamId> {
        let fan_in = (cin * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let value = Tensor::from_fn([cout, cin, k, k], |_| normal.sample(&mut self.rng) as f32);
        self.store.insert(format!("{name}.weight"), EntryKind::Param, value)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize], kind: EntryKind) -> Result<ParamId> {
        self.store.insert(name, kind, Tensor::zeros(shape.to_vec()))
    }

    pub fn ones(&mut self, name: String, shape: &[usize], kind: EntryKind) -> Result<ParamId> {
        self.store.insert(name, kind, Tensor::full(shape.to_vec(), 1.0))
    }
}

/// Parameter leaves created during one forward pass.
#[derive(Debug, Default)]
pub struct Bindings(pub(crate) Vec<(ParamId, Var)>);

impl Bindings {
    /// Gradient per parameter after `tape.backward`, summed over every use.
    /// Parameters the graph never touched get zeros.
    pub fn gradients(&self, tape: &Tape<f32>, store: &ParamStore) -> Vec<(ParamId, Tensor<f32>)> {
        let mut grads: Vec<Option<Tensor<f32>>> = vec![None; store.len()];
        for &(id, var) in &self.0 {
            let g = tape.grad_or_zeros(var);
            match &mut grads[id.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        store
            .param_ids()
            .into_iter()
            .map(|id| {
                let g = grads[id.0].take().unwrap_or_else(|| Tensor::zeros(store.value(id).shape().to_vec()));
                (id, g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.insert("a", EntryKind::Param, Tensor::zeros([1])).unwrap();
        assert!(store.insert("a", EntryKind::Buffer, Tensor::zeros([1])).is_err());
    }

    #[test]
    fn kaiming_scale_is_plausible() {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, 1);
        let id = b.conv_weight("c", 64, 64, 3).unwrap();
        let w = store.value(id).data();
        let var = w.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / w.len() as f64;
        let want = 2.0 / (64.0 * 9.0);
        assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
    }
}
