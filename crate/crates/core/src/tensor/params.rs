//! Named parameter collection. Models own a `Params` store; each training
//! step binds every entry onto a fresh tape as a leaf, and the optimizer
//! updates the stored tensors in place from the gradients the tape produced.

use std::collections::HashMap;

use super::{Element, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Stable handle to one named parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

pub struct ParamEntry<T: Element> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Registry of named parameter tensors, in insertion order.
pub struct Params<T: Element> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Element> Default for Params<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Params<T> {
    pub fn new() -> Self {
        Params { entries: Vec::new(), by_name: HashMap::new() }
    }

    /// Registers a trainable tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::format(format!("duplicate parameter name: {name}")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(ParamEntry { name, tensor, trainable: true });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all entries.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Marks every entry trainable or frozen.
    pub fn set_trainable_all(&mut self, flag: bool) {
        for e in &mut self.entries {
            e.trainable = flag;
        }
    }

    /// Inserts every entry onto the tape as a leaf. Frozen entries become
    /// constants, so no gradient can reach them.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| tape.leaf(e.tensor.clone().with_requires_grad(e.trainable)))
            .collect();
        Bound { vars }
    }

    /// Binds every entry as a constant, for inference-only passes.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self.entries.iter().map(|e| tape.constant(e.tensor.clone())).collect();
        Bound { vars }
    }

    /// Copies tensors by name from a saved store. Shapes must match; entries
    /// missing on either side are an error.
    pub fn load_from(&mut self, saved: &Params<T>) -> Result<()> {
        if saved.len() != self.len() {
            return Err(Error::format(format!(
                "checkpoint has {} tensors, model expects {}",
                saved.len(),
                self.len()
            )));
        }
        for e in &mut self.entries {
            let src = saved
                .by_name
                .get(&e.name)
                .map(|&i| &saved.entries[i].tensor)
                .ok_or_else(|| Error::format(format!("checkpoint missing tensor {}", e.name)))?;
            if src.shape() != e.tensor.shape() {
                return Err(Error::format(format!(
                    "tensor {} has shape {:?} in checkpoint, model expects {:?}",
                    e.name,
                    src.shape(),
                    e.tensor.shape()
                )));
            }
            e.tensor = src.clone();
        }
        Ok(())
    }

    /// FNV-1a over names, shapes and value bits; used to assert that frozen
    /// parameters never move.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for e in &self.entries {
            for b in e.name.as_bytes() {
                eat(*b);
            }
            for &d in e.tensor.shape() {
                for b in (d as u64).to_le_bytes() {
                    eat(b);
                }
            }
            for v in e.tensor.data() {
                for b in v.to_f64().to_bits().to_le_bytes() {
                    eat(b);
                }
            }
        }
        h
    }
}

/// Tape bindings for one step, aligned with the `Params` entry order.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients per entry after `tape.backward`, `None` for frozen entries.
    pub fn grads<T: Element>(&self, tape: &Tape<T>) -> Vec<Option<Vec<T>>> {
        self.vars.iter().map(|&v| tape.grad(v).map(|g| g.to_vec())).collect()
    }
}
