use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::graph::Graph;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Decayed by the optimizer.
    Weight,
    /// Biases and normalization gains: trained, never decayed.
    NoDecay,
    /// Running statistics: not trained.
    Buffer,
}

/// Named, ordered parameter tensors of one model.
pub struct ParamStore<T> {
    uid: u64,
    trainable: bool,
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> std::fmt::Debug for ParamStore<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.names.iter().zip(self.values.iter().map(|v| v.shape())))
            .finish()
    }
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            trainable: self.trainable,
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            values: self.values.clone(),
        }
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            trainable: true,
            names: Vec::new(),
            kinds: Vec::new(),
            values: Vec::new(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.kinds.push(kind);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.kinds[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.ids()
            .filter(|&id| self.kind(id) != ParamKind::Buffer)
            .map(|id| self.get(id).len())
            .sum()
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Marks the store as a fixed regularizer: bound leaves get no gradient.
    pub fn freeze(&mut self) {
        self.trainable = false;
    }

    pub fn unfreeze(&mut self) {
        self.trainable = true;
    }

    pub fn apply_buffer_updates(&mut self, graph: &mut Graph<T>) {
        let uid = self.uid;
        let updates = std::mem::take(&mut graph.buffer_updates);
        let mut rest = Vec::new();
        for u in updates {
            if u.store == uid {
                self.values[u.id.0] = u.value;
            } else {
                rest.push(u);
            }
        }
        graph.buffer_updates = rest;
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            trainable: self.trainable,
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            values: self.values.iter().map(|v| v.cast()).collect(),
        }
    }

    /// Copies values from `other` matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for id in self.ids().collect::<Vec<_>>() {
            let name = self.names[id.0].clone();
            let src = other
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let value = other.get(src);
            if value.shape() != self.values[id.0].shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} != expected {:?}",
                    value.shape(),
                    self.values[id.0].shape()
                )));
            }
            self.values[id.0] = value.clone();
        }
        Ok(())
    }

    /// Element-wise arithmetic mean of stores sharing one layout.
    pub fn average(stores: &[&ParamStore<T>]) -> Result<ParamStore<T>> {
        let first = stores
            .first()
            .ok_or_else(|| Error::validation("cannot average zero checkpoints"))?;
        let mut out = (*first).clone();
        for s in &stores[1..] {
            if s.names != first.names {
                return Err(Error::validation("checkpoint layouts differ"));
            }
            for (acc, v) in out.values.iter_mut().zip(&s.values) {
                acc.add_assign(v);
            }
        }
        let inv = T::one() / T::of(stores.len() as f64);
        for v in &mut out.values {
            v.scale_in_place(inv);
        }
        Ok(out)
    }

    pub fn bitwise_eq(&self, other: &ParamStore<T>) -> bool {
        self.names == other.names
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.f64().to_bits() == y.f64().to_bits())
            })
    }
}
