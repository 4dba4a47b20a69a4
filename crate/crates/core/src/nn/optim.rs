use super::params::{ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Adam with decoupled weight decay. Decay skips biases, normalization
/// gains and buffers.
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr`. `grads` is indexed like
    /// the store; `None` entries are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) {
        assert_eq!(grads.len(), store.len(), "gradient count mismatch");
        if self.moments.len() < store.len() {
            self.moments.resize_with(store.len(), || None);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(self.eps);
        let decay = T::of(1.0 - lr * self.weight_decay);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(grad) = &grads[id.index()] else {
                continue;
            };
            let kind = store.kind(id);
            if kind == ParamKind::Buffer {
                continue;
            }
            let slot = &mut self.moments[id.index()];
            let (m, v) = slot
                .get_or_insert_with(|| (Tensor::zeros(grad.shape()), Tensor::zeros(grad.shape())));
            let p = store.get_mut(id);
            if kind == ParamKind::Weight && self.weight_decay > 0.0 {
                p.scale_in_place(decay);
            }
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                *pv -= step_size * *mv / ((*vv * inv_bc2).sqrt() + eps);
            }
        }
    }
}

/// Adds `new` into `acc`, treating `None` as zero.
pub fn accumulate_grads<T: Scalar>(acc: &mut Vec<Option<Tensor<T>>>, new: Vec<Option<Tensor<T>>>) {
    if acc.is_empty() {
        *acc = new;
        return;
    }
    assert_eq!(acc.len(), new.len(), "gradient count mismatch");
    for (a, n) in acc.iter_mut().zip(new) {
        match (a.as_mut(), n) {
            (Some(a), Some(n)) => a.add_assign(&n),
            (None, Some(n)) => *a = Some(n),
            _ => {}
        }
    }
}

/// Multiplies every gradient by `s`.
pub fn scale_grads<T: Scalar>(grads: &mut [Option<Tensor<T>>], s: f64) {
    for g in grads.iter_mut().flatten() {
        g.scale_in_place(T::of(s));
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm<T: Scalar>(grads: &[Option<Tensor<T>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.data().iter())
        .map(|x| x.f64() * x.f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients in place so their global norm is at most `max_norm`.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.scale_in_place(s);
        }
    }
    norm
}
