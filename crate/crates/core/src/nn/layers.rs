//! Parameterized building blocks. Each layer owns [`ParamId`]s into a
//! caller-provided [`ParamStore`] and binds them into a [`Graph`] on forward.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// He/Kaiming normal with the given fan-in.
    HeNormal {
        fan_in: usize,
    },
    /// He/Kaiming uniform with the given fan-in.
    HeUniform {
        fan_in: usize,
    },
    XavierUniform {
        fan_in: usize,
        fan_out: usize,
        gain: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Constant(f64),
}

impl Init {
    pub fn sample<T: Scalar, R: Rng>(self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        let len: usize = shape.iter().product();
        let data: Vec<f64> = match self {
            Init::HeNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let d = Normal::new(0.0, std).expect("valid std");
                (0..len).map(|_| d.sample(rng)).collect()
            }
            Init::HeUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                uniform(len, -bound, bound, rng)
            }
            Init::XavierUniform {
                fan_in,
                fan_out,
                gain,
            } => {
                let bound = gain * (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                uniform(len, -bound, bound, rng)
            }
            Init::Uniform { low, high } => uniform(len, low, high, rng),
            Init::Constant(c) => vec![c; len],
        };
        Tensor::from_vec(shape, data.into_iter().map(T::of).collect())
    }
}

fn uniform<R: Rng>(len: usize, low: f64, high: f64, rng: &mut R) -> Vec<f64> {
    if low == high {
        return vec![low; len];
    }
    let d = Uniform::new(low, high).expect("valid range");
    (0..len).map(|_| d.sample(rng)).collect()
}

/// Affine map `x W^T + b` on row vectors: `[rows, in] -> [rows, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        bias_init: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init.sample(&[out_dim, in_dim], rng),
            ParamKind::Weight,
        );
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::full(&[out_dim], T::of(bias_init)),
            ParamKind::NoDecay,
        );
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let init = Init::XavierUniform {
            fan_in: in_dim,
            fan_out: out_dim,
            gain: 1.0,
        };
        Self::new(store, name, in_dim, out_dim, init, 0.0, rng)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul_t(x, w, false, true);
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(
                format!("{name}.gain"),
                Tensor::full(&[dim], T::one()),
                ParamKind::NoDecay,
            ),
            bias: store.add(
                format!("{name}.bias"),
                Tensor::zeros(&[dim]),
                ParamKind::NoDecay,
            ),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, Self::EPS)
    }
}

/// 3x3 same-padded convolution on `[cin, f, t]`.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv3x3 {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        let init = Init::HeNormal { fan_in: cin * 9 };
        Conv3x3 {
            weight: store.add(
                format!("{name}.weight"),
                init.sample(&[cout, cin * 9], rng),
                ParamKind::Weight,
            ),
            bias: store.add(
                format!("{name}.bias"),
                Tensor::zeros(&[cout]),
                ParamKind::NoDecay,
            ),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv3x3(x, w, b)
    }
}

/// Batch normalization over the `(freq, time)` plane of each channel.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gain: store.add(
                format!("{name}.gain"),
                Tensor::full(&[channels], T::one()),
                ParamKind::NoDecay,
            ),
            bias: store.add(
                format!("{name}.bias"),
                Tensor::zeros(&[channels]),
                ParamKind::NoDecay,
            ),
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                ParamKind::Buffer,
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full(&[channels], T::one()),
                ParamKind::Buffer,
            ),
        }
    }

    /// Training graphs normalize with batch statistics and record updated
    /// running averages; inference graphs use the running averages.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        if !g.is_training() {
            let mean = store.get(self.running_mean).data().to_vec();
            let var = store.get(self.running_var).data().to_vec();
            return g
                .batch_norm(x, gain, bias, Some((&mean, &var)), Self::EPS)
                .0;
        }
        let count = {
            let shape = g.shape(x);
            shape[1] * shape[2]
        };
        let (y, stats) = g.batch_norm(x, gain, bias, None, Self::EPS);
        let (mean, var) = stats.expect("batch statistics");
        let m = T::of(Self::MOMENTUM);
        let unbias = if count > 1 {
            T::of(count as f64 / (count - 1) as f64)
        } else {
            T::one()
        };
        let rm = Tensor::from_fn(&[mean.len()], |i| {
            (T::one() - m) * store.get(self.running_mean).data()[i] + m * mean[i]
        });
        let rv = Tensor::from_fn(&[var.len()], |i| {
            (T::one() - m) * store.get(self.running_var).data()[i] + m * var[i] * unbias
        });
        g.record_buffer(store, self.running_mean, rm);
        g.record_buffer(store, self.running_var, rv);
        y
    }
}

/// Single-direction GRU layer over `[n, in] -> [n, hidden]`, gate order
/// (reset, update, new).
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl Gru {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_ih = store.add(
            format!("{name}.w_ih"),
            Init::HeUniform { fan_in: in_dim }.sample(&[3 * hidden, in_dim], rng),
            ParamKind::Weight,
        );
        let w_hh = store.add(
            format!("{name}.w_hh"),
            Init::HeUniform { fan_in: hidden }.sample(&[3 * hidden, hidden], rng),
            ParamKind::Weight,
        );
        let b_ih = store.add(
            format!("{name}.b_ih"),
            Tensor::zeros(&[3 * hidden]),
            ParamKind::NoDecay,
        );
        let b_hh = store.add(
            format!("{name}.b_hh"),
            Tensor::zeros(&[3 * hidden]),
            ParamKind::NoDecay,
        );
        Gru {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            hidden,
        }
    }

    /// Runs the recurrence over the rows of `x` (reversed when `reverse`),
    /// returning hidden states aligned with the input rows.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        reverse: bool,
    ) -> Var {
        let h = self.hidden;
        let n = g.shape(x)[0];
        let w_ih = g.param(store, self.w_ih);
        let w_hh = g.param(store, self.w_hh);
        let b_ih = g.param(store, self.b_ih);
        let b_hh = g.param(store, self.b_hh);
        let xi = g.matmul_t(x, w_ih, false, true);
        let xi = g.add_row(xi, b_ih);
        let mut state = g.constant(Tensor::zeros(&[1, h]));
        let mut outputs = vec![state; n];
        let order: Vec<usize> = if reverse {
            (0..n).rev().collect()
        } else {
            (0..n).collect()
        };
        for &t in &order {
            let xt = g.slice_rows(xi, t, 1);
            let hh = g.matmul_t(state, w_hh, false, true);
            let hh = g.add_row(hh, b_hh);
            let x_rz = g.slice_cols(xt, 0, 2 * h);
            let h_rz = g.slice_cols(hh, 0, 2 * h);
            let rz = g.add(x_rz, h_rz);
            let rz = g.sigmoid(rz);
            let r = g.slice_cols(rz, 0, h);
            let z = g.slice_cols(rz, h, h);
            let x_n = g.slice_cols(xt, 2 * h, h);
            let h_n = g.slice_cols(hh, 2 * h, h);
            let gated = g.mul(r, h_n);
            let cand = g.add(x_n, gated);
            let cand = g.tanh(cand);
            // h' = (1 - z) * n + z * h = n + z * (h - n)
            let diff = g.sub(state, cand);
            let zd = g.mul(z, diff);
            state = g.add(cand, zd);
            outputs[t] = state;
        }
        g.concat_rows(&outputs)
    }
}
