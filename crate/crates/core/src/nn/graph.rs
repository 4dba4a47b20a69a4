//! Reverse-mode automatic differentiation on a per-forward tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op pushes a node
//! holding its value and a closure mapping the output gradient to parent
//! gradients. Parameters are bound from a [`ParamStore`] on first use.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

pub struct BackwardArgs<'a, T> {
    pub grad: &'a Tensor<T>,
    pub out: &'a Tensor<T>,
    pub inputs: &'a [&'a Tensor<T>],
    pub needs: &'a [bool],
}

pub type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub(crate) struct BufferUpdate<T> {
    pub store: u64,
    pub id: ParamId,
    pub value: Tensor<T>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    bound: HashMap<(u64, usize), Var>,
    training: bool,
    rng: ChaCha8Rng,
    pub(crate) buffer_updates: Vec<BufferUpdate<T>>,
}

impl<T: Scalar> Graph<T> {
    /// A graph in training mode (dropout active, batch statistics) whose
    /// stochastic ops draw from a generator seeded with `seed`.
    pub fn training(seed: u64) -> Self {
        Self::with_mode(true, seed)
    }

    pub fn inference() -> Self {
        Self::with_mode(false, 0)
    }

    pub fn with_mode(training: bool, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            bound: HashMap::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            buffer_updates: Vec::new(),
        }
    }

    /// Switches dropout and batch statistics on or off for ops recorded
    /// from now on; returns the previous mode.
    pub fn set_training(&mut self, training: bool) -> bool {
        std::mem::replace(&mut self.training, training)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Binds a parameter as a leaf. Repeated binds return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (store.uid(), id.0);
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        let grad = store.is_trainable() && store.kind(id) != ParamKind::Buffer;
        let v = self.leaf(store.get(id).clone(), grad);
        self.bound.insert(key, v);
        v
    }

    pub fn bound_var(&self, store: &ParamStore<T>, id: ParamId) -> Option<Var> {
        self.bound.get(&(store.uid(), id.0)).copied()
    }

    pub fn push<F>(&mut self, value: Tensor<T>, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.to_vec(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a new value for a running-statistics buffer; applied by
    /// [`ParamStore::apply_buffer_updates`].
    pub(crate) fn record_buffer(&mut self, store: &ParamStore<T>, id: ParamId, value: Tensor<T>) {
        self.buffer_updates.push(BufferUpdate {
            store: store.uid(),
            id,
            value,
        });
    }

    /// Back-propagates from a scalar `root`. Only leaf gradients are kept.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let root_val = &self.nodes[root.0].value;
        assert_eq!(root_val.len(), 1, "backward root must be a scalar");
        grads[root.0] = Some(Tensor::full(root_val.shape(), T::one()));

        for i in (0..n).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(bw) = &node.backward else {
                leaves[i] = Some(grad);
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node
                .parents
                .iter()
                .map(|p| &self.nodes[p.0].value)
                .collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|p| self.nodes[p.0].requires_grad)
                .collect();
            let parent_grads = bw(&BackwardArgs {
                grad: &grad,
                out: &node.value,
                inputs: &inputs,
                needs: &needs,
            });
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((p, g), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(g), true) = (g, *need) else {
                    continue;
                };
                debug_assert_eq!(g.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Gradients { leaves }
    }
}

pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for every entry of `store`, `None` where the parameter did
    /// not take part in the forward pass.
    pub fn for_store(&self, graph: &Graph<T>, store: &ParamStore<T>) -> Vec<Option<Tensor<T>>> {
        store
            .ids()
            .map(|id| {
                graph
                    .bound_var(store, id)
                    .and_then(|v| self.get(v).cloned())
            })
            .collect()
    }
}
