//! Named parameter collections with a freeze set.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::{Fnv, Tensor};

/// Parameters keyed by dotted names (`clip_adapter.w1`, `lm.blocks.0.attn.wq`).
///
/// Iteration order is the lexicographic name order, which keeps
/// serialization and optimizer updates deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            bail!(Config, "duplicate parameter name {}", name);
        }
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    /// Inserts or overwrites, keeping the freeze flag.
    pub fn set(&mut self, name: &str, t: Tensor) {
        self.params.insert(name.to_string(), t);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.frozen.remove(name);
        self.params.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        match self.params.get(name) {
            Some(t) => Ok(t),
            None => bail!(Index, "unknown parameter {}", name),
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.params.get_mut(name) {
            Some(t) => Ok(t),
            None => bail!(Index, "unknown parameter {}", name),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn freeze(&mut self, name: &str) -> Result<()> {
        if !self.params.contains_key(name) {
            bail!(Index, "cannot freeze unknown parameter {}", name);
        }
        self.frozen.insert(name.to_string());
        Ok(())
    }

    pub fn unfreeze(&mut self, name: &str) {
        self.frozen.remove(name);
    }

    pub fn freeze_all(&mut self) {
        self.frozen = self.params.keys().cloned().collect();
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen_names(&self) -> impl Iterator<Item = &str> {
        self.frozen.iter().map(String::as_str)
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            let z = vec![0.0; t.len()];
            // Lengths match by construction.
            let _ = t.set_grad(Some(z));
        }
    }

    pub fn clear_grads(&mut self) {
        for t in self.params.values_mut() {
            let _ = t.set_grad(None);
        }
    }

    /// Number of scalar values in non-frozen parameters.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|(k, _)| !self.frozen.contains(*k)).map(|(_, t)| t.len()).sum()
    }

    /// Digest of every parameter whose name starts with `prefix`.
    pub fn checksum_prefix(&self, prefix: &str) -> u64 {
        let mut h = Fnv::new();
        for (k, t) in self.params.range(prefix.to_string()..) {
            if !k.starts_with(prefix) {
                break;
            }
            h.write(k.as_bytes());
            h.write(&t.checksum().to_le_bytes());
        }
        h.finish()
    }

    /// Names starting with `prefix`, in order.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.params.keys().filter(move |k| k.starts_with(prefix)).map(String::as_str)
    }

    /// Names whose values differ bitwise from `other` (or exist on one side only).
    pub fn changed_names(&self, other: &ParamSet) -> Vec<String> {
        let mut out = Vec::new();
        for (k, t) in &self.params {
            match other.params.get(k) {
                Some(o) if o.bit_eq(t) => {}
                _ => out.push(k.clone()),
            }
        }
        for k in other.params.keys() {
            if !self.params.contains_key(k) {
                out.push(k.clone());
            }
        }
        out
    }
}
