//! Named parameter storage.
//!
//! A `ParamStore` is a flat, ordered collection of named tensors. Order is
//! insertion order and is part of the checkpoint contract, so model builders
//! must register parameters deterministically.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a unique name, returning its slot.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let slot = self.entries.len();
        self.index.insert(name.to_string(), slot);
        self.entries.push((name.to_string(), tensor));
        slot
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slot(name).map(|s| &self.entries[s].1)
    }

    /// Panics if the name is unknown; use for names the model builder owns.
    pub fn expect(&self, name: &str) -> &Tensor {
        self.get(name)
            .unwrap_or_else(|| panic!("missing parameter {name:?}"))
    }

    pub fn tensor(&self, slot: usize) -> &Tensor {
        &self.entries[slot].1
    }

    pub fn tensor_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.entries[slot].1
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.entries[slot].0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total scalar count over parameters whose name passes the filter.
    pub fn count_scalars(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| filter(n))
            .map(|(_, t)| t.len())
            .sum()
    }
}

/// Per-slot gradients aligned with a `ParamStore`.
#[derive(Clone, Debug)]
pub struct Gradients {
    by_slot: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(n_slots: usize) -> Self {
        Gradients {
            by_slot: vec![None; n_slots],
        }
    }

    pub fn accumulate(&mut self, slot: usize, delta: &Tensor) {
        match &mut self.by_slot[slot] {
            Some(t) => t.add_assign(delta),
            g @ None => *g = Some(delta.clone()),
        }
    }

    pub fn accumulate_owned(&mut self, slot: usize, delta: Tensor) {
        match &mut self.by_slot[slot] {
            Some(t) => t.add_assign(&delta),
            g @ None => *g = Some(delta),
        }
    }

    pub fn get(&self, slot: usize) -> Option<&Tensor> {
        self.by_slot[slot].as_ref()
    }

    pub fn n_slots(&self) -> usize {
        self.by_slot.len()
    }

    /// Merge another gradient set into this one (fixed, by-slot order).
    pub fn merge(&mut self, other: &Gradients) {
        assert_eq!(self.by_slot.len(), other.by_slot.len());
        for (slot, g) in other.by_slot.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(slot, g);
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.by_slot.iter_mut().flatten() {
            g.scale_assign(k);
        }
    }

    /// Global L2 norm over all gradient entries.
    pub fn global_norm(&self) -> f64 {
        self.by_slot
            .iter()
            .flatten()
            .flat_map(|t| t.as_slice())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_and_lookup() {
        let mut store = ParamStore::new();
        let s = store.insert("w", Tensor::zeros(&[2, 2]));
        assert_eq!(store.slot("w"), Some(s));
        assert_eq!(store.expect("w").len(), 4);
        assert_eq!(store.count_scalars(|_| true), 4);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_name_panics() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(&[1]));
        store.insert("w", Tensor::zeros(&[1]));
    }

    #[test]
    fn gradient_merge_and_norm() {
        let mut a = Gradients::empty(2);
        a.accumulate(0, &Tensor::from_vec(&[2], vec![3.0, 0.0]));
        let mut b = Gradients::empty(2);
        b.accumulate(0, &Tensor::from_vec(&[2], vec![0.0, 4.0]));
        a.merge(&b);
        assert!((a.global_norm() - 5.0).abs() < 1e-12);
    }
}
