//! Differentiable tensor operations. Matrices are row-major `[rows, cols]`;
//! sequence models keep time on the row axis.

use rand::Rng;

use super::graph::{Graph, Var};
use crate::tensor::{gemm, Scalar, Tensor};

fn unary_grad<T: Scalar>(grad: &Tensor<T>, local: impl Fn(usize) -> T) -> Tensor<T> {
    Tensor::from_fn(grad.shape(), |i| grad.data()[i] * local(i))
}

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, &[a, b], |args| {
            vec![Some(args.grad.clone()), Some(args.grad.clone())]
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, &[a, b], |args| {
            vec![Some(args.grad.clone()), Some(args.grad.map(|g| -g))]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, &[a, b], |args| {
            let ga = args.needs[0].then(|| args.grad.zip_map(args.inputs[1], |g, y| g * y));
            let gb = args.needs[1].then(|| args.grad.zip_map(args.inputs[0], |g, x| g * x));
            vec![ga, gb]
        })
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let out = self.value(a).map(|x| x * s);
        self.push(out, &[a], move |args| vec![Some(args.grad.map(|g| g * s))])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let out = self.value(a).map(|x| x + s);
        self.push(out, &[a], |args| vec![Some(args.grad.clone())])
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() - x);
        self.push(out, &[a], |args| vec![Some(args.grad.map(|g| -g))])
    }

    /// Adds a `[cols]` (or `[1, cols]`) vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let xv = self.value(x);
        let cols = *xv.shape().last().expect("add_row on scalar");
        assert_eq!(self.value(b).len(), cols, "add_row bias length");
        let bd = self.value(b).data().to_vec();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, &bb) in row.iter_mut().zip(&bd) {
                *o += bb;
            }
        }
        let bshape = self.value(b).shape().to_vec();
        self.push(out, &[x, b], move |args| {
            let gb = args.needs[1].then(|| {
                let mut acc = vec![T::zero(); cols];
                for row in args.grad.data().chunks(cols) {
                    for (a, &g) in acc.iter_mut().zip(row) {
                        *a += g;
                    }
                }
                Tensor::from_vec(&bshape, acc)
            });
            vec![Some(args.grad.clone()), gb]
        })
    }

    /// Matrix product `op(a) * op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = if trans_a {
            (av.cols(), av.rows())
        } else {
            (av.rows(), av.cols())
        };
        let (k2, n) = if trans_b {
            (bv.cols(), bv.rows())
        } else {
            (bv.rows(), bv.cols())
        };
        assert_eq!(
            k,
            k2,
            "matmul inner dims {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            T::one(),
            av.data(),
            trans_a,
            bv.data(),
            trans_b,
            T::zero(),
            out.data_mut(),
        );
        self.push(out, &[a, b], move |args| {
            let g = args.grad.data();
            let (ad, bd) = (args.inputs[0].data(), args.inputs[1].data());
            let ga = args.needs[0].then(|| {
                let shape = args.inputs[0].shape();
                let mut ga = Tensor::zeros(shape);
                if trans_a {
                    // a stored [k, m]: dA = op(b) * G^T
                    gemm(
                        k,
                        n,
                        m,
                        T::one(),
                        bd,
                        trans_b,
                        g,
                        true,
                        T::zero(),
                        ga.data_mut(),
                    );
                } else {
                    // dA = G * op(b)^T
                    gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        false,
                        bd,
                        !trans_b,
                        T::zero(),
                        ga.data_mut(),
                    );
                }
                ga
            });
            let gb = args.needs[1].then(|| {
                let shape = args.inputs[1].shape();
                let mut gb = Tensor::zeros(shape);
                if trans_b {
                    // b stored [n, k]: dB = G^T * op(a)
                    gemm(
                        n,
                        m,
                        k,
                        T::one(),
                        g,
                        true,
                        ad,
                        trans_a,
                        T::zero(),
                        gb.data_mut(),
                    );
                } else {
                    // dB = op(a)^T * G
                    gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        ad,
                        !trans_a,
                        g,
                        false,
                        T::zero(),
                        gb.data_mut(),
                    );
                }
                gb
            });
            vec![ga, gb]
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(out, &[a], |args| {
            let x = args.inputs[0].data();
            vec![Some(unary_grad(args.grad, |i| {
                if x[i] > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }))]
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, &[a], |args| {
            let y = args.out.data();
            vec![Some(unary_grad(args.grad, |i| y[i] * (T::one() - y[i])))]
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, &[a], |args| {
            let y = args.out.data();
            vec![Some(unary_grad(args.grad, |i| T::one() - y[i] * y[i]))]
        })
    }

    /// `ln(max(x, floor))`; the gradient vanishes where the floor binds.
    pub fn ln(&mut self, a: Var, floor: f64) -> Var {
        let floor = T::of(floor);
        let out = self.value(a).map(|x| x.max(floor).ln());
        self.push(out, &[a], move |args| {
            let x = args.inputs[0].data();
            vec![Some(unary_grad(args.grad, |i| {
                if x[i] > floor {
                    T::one() / x[i]
                } else {
                    T::zero()
                }
            }))]
        })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, &[a], |args| {
            let g = args.grad.item();
            vec![Some(Tensor::full(args.inputs[0].shape(), g))]
        })
    }

    /// Sum of scalar vars.
    pub fn sum_scalars(&mut self, terms: &[Var]) -> Var {
        assert!(!terms.is_empty(), "sum of no terms");
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        self.push(out, &[a], move |args| {
            let mut ga = args.grad.clone();
            for (grow, yrow) in ga
                .data_mut()
                .chunks_mut(cols)
                .zip(args.out.data().chunks(cols))
            {
                let dot: T = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                for (g, &y) in grow.iter_mut().zip(yrow) {
                    *g = y * (*g - dot);
                }
            }
            vec![Some(ga)]
        })
    }

    /// Layer normalization over each row with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let rows = xv.rows();
        let eps = T::of(eps);
        let gd = self.value(gain).data().to_vec();
        let bd = self.value(bias).data().to_vec();
        assert_eq!(gd.len(), cols);
        let mut xhat = Vec::with_capacity(rows * cols);
        let mut inv_std = Vec::with_capacity(rows);
        let n = T::of(cols as f64);
        for row in xv.data().chunks(cols) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|&v| (v - mean) * is));
        }
        let out = Tensor::from_fn(&[rows, cols], |i| xhat[i] * gd[i % cols] + bd[i % cols]);
        self.push(out, &[x, gain, bias], move |args| {
            let g = args.grad.data();
            let gain = args.inputs[1].data();
            let mut gx = vec![T::zero(); rows * cols];
            let mut ggain = vec![T::zero(); cols];
            let mut gbias = vec![T::zero(); cols];
            for r in 0..rows {
                let gr = &g[r * cols..(r + 1) * cols];
                let xr = &xhat[r * cols..(r + 1) * cols];
                let mut sum_dxhat = T::zero();
                let mut sum_dxhat_xhat = T::zero();
                for c in 0..cols {
                    let dxh = gr[c] * gain[c];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xr[c];
                    ggain[c] += gr[c] * xr[c];
                    gbias[c] += gr[c];
                }
                let is = inv_std[r];
                for c in 0..cols {
                    let dxh = gr[c] * gain[c];
                    gx[r * cols + c] = is * (dxh - sum_dxhat / n - xr[c] * sum_dxhat_xhat / n);
                }
            }
            vec![
                Some(Tensor::from_vec(&[rows, cols], gx)),
                Some(Tensor::from_vec(args.inputs[1].shape(), ggain)),
                Some(Tensor::from_vec(args.inputs[2].shape(), gbias)),
            ]
        })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        assert!(start + len <= cols, "slice_cols out of range");
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&av.data()[r * cols + start..r * cols + start + len]);
        }
        self.push(Tensor::from_vec(&[rows, len], out), &[a], move |args| {
            let mut ga = Tensor::zeros(&[rows, cols]);
            for r in 0..rows {
                ga.data_mut()[r * cols + start..r * cols + start + len]
                    .copy_from_slice(&args.grad.data()[r * len..(r + 1) * len]);
            }
            vec![Some(ga)]
        })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                out.extend_from_slice(&pv.data()[r * w..(r + 1) * w]);
            }
        }
        self.push(Tensor::from_vec(&[rows, total], out), parts, move |args| {
            let g = args.grad.data();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(widths.len());
            for (i, &w) in widths.iter().enumerate() {
                if args.needs[i] {
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    grads.push(Some(Tensor::from_vec(&[rows, w], gp)));
                } else {
                    grads.push(None);
                }
                offset += w;
            }
            grads
        })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        assert!(start + len <= rows, "slice_rows out of range");
        let out = Tensor::from_vec(
            &[len, cols],
            av.data()[start * cols..(start + len) * cols].to_vec(),
        );
        self.push(out, &[a], move |args| {
            let mut ga = Tensor::zeros(&[rows, cols]);
            ga.data_mut()[start * cols..(start + len) * cols].copy_from_slice(args.grad.data());
            vec![Some(ga)]
        })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let heights: Vec<usize> = parts.iter().map(|&p| self.value(p).rows()).collect();
        let mut out = Vec::new();
        for &p in parts {
            assert_eq!(self.value(p).cols(), cols, "concat_rows col mismatch");
            out.extend_from_slice(self.value(p).data());
        }
        let total: usize = heights.iter().sum();
        self.push(Tensor::from_vec(&[total, cols], out), parts, move |args| {
            let mut offset = 0;
            heights
                .iter()
                .enumerate()
                .map(|(i, &h)| {
                    let part = args.needs[i].then(|| {
                        Tensor::from_vec(
                            &[h, cols],
                            args.grad.data()[offset * cols..(offset + h) * cols].to_vec(),
                        )
                    });
                    offset += h;
                    part
                })
                .collect()
        })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose2();
        self.push(out, &[a], |args| vec![Some(args.grad.transpose2())])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let from = self.value(a).shape().to_vec();
        let out = self.value(a).clone().reshaped(shape);
        self.push(out, &[a], move |args| {
            vec![Some(args.grad.clone().reshaped(&from))]
        })
    }

    /// Reverses the row order of a matrix.
    pub fn reverse_rows(&mut self, a: Var) -> Var {
        let out = reverse_rows(self.value(a));
        self.push(out, &[a], |args| vec![Some(reverse_rows(args.grad))])
    }

    /// Inverted dropout; identity outside training mode or for `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.is_training() || p <= 0.0 {
            return a;
        }
        let len = self.value(a).len();
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..len)
            .map(|_| {
                if self.rng().random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = Tensor::from_fn(self.value(a).shape(), |i| self.value(a).data()[i] * mask[i]);
        self.push(out, &[a], move |args| {
            vec![Some(unary_grad(args.grad, |i| mask[i]))]
        })
    }

    /// Overwrites the listed rows of `x` with the vector `v`.
    pub fn replace_rows(&mut self, x: Var, rows: &[usize], v: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let vd = self.value(v).data().to_vec();
        assert_eq!(vd.len(), cols, "replace_rows vector length");
        let mut out = xv.clone();
        let rows = rows.to_vec();
        for &r in &rows {
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(&vd);
        }
        let vshape = self.value(v).shape().to_vec();
        self.push(out, &[x, v], move |args| {
            let mut gx = args.grad.clone();
            let mut gv = vec![T::zero(); cols];
            for &r in &rows {
                for c in 0..cols {
                    gv[c] += args.grad.data()[r * cols + c];
                    gx.data_mut()[r * cols + c] = T::zero();
                }
            }
            vec![Some(gx), Some(Tensor::from_vec(&vshape, gv))]
        })
    }

    /// Column-wise max over row windows `[start, end)` of `x`, one output
    /// row per window.
    pub fn segment_max_rows(&mut self, x: Var, windows: &[(usize, usize)]) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(windows.len() * cols);
        let mut arg = Vec::with_capacity(windows.len() * cols);
        for &(s, e) in windows {
            assert!(
                s < e && e <= rows,
                "invalid pooling window [{s}, {e}) for {rows} rows"
            );
            for c in 0..cols {
                let mut best = s;
                for t in s + 1..e {
                    if xv.data()[t * cols + c] > xv.data()[best * cols + c] {
                        best = t;
                    }
                }
                arg.push(best);
                out.push(xv.data()[best * cols + c]);
            }
        }
        let n = windows.len();
        self.push(Tensor::from_vec(&[n, cols], out), &[x], move |args| {
            let mut gx = Tensor::zeros(&[rows, cols]);
            for (i, &t) in arg.iter().enumerate() {
                let c = i % cols;
                gx.data_mut()[t * cols + c] += args.grad.data()[i];
            }
            vec![Some(gx)]
        })
    }

    /// Weighted binary cross entropy on logits, summed:
    /// `-sum_{r,c} scale * (w_c * t * ln s(x) + (1 - t) * ln(1 - s(x)))`.
    ///
    /// `target` may itself require gradients (soft relaxed targets).
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        target: Var,
        pos_weight: &[f64],
        scale: f64,
    ) -> Var {
        let xv = self.value(logits);
        let tv = self.value(target);
        assert_eq!(xv.shape(), tv.shape(), "bce shape mismatch");
        let cols = xv.cols();
        assert_eq!(pos_weight.len(), cols, "bce weight length");
        let w: Vec<T> = pos_weight.iter().map(|&b| T::of(b)).collect();
        let scale = T::of(scale);
        let mut total = T::zero();
        for (i, (&x, &t)) in xv.data().iter().zip(tv.data()).enumerate() {
            let wc = w[i % cols];
            total += -(wc * t * log_sigmoid(x) + (T::one() - t) * log_sigmoid(-x));
        }
        self.push(
            Tensor::scalar(total * scale),
            &[logits, target],
            move |args| {
                let g = args.grad.item() * scale;
                let (xd, td) = (args.inputs[0].data(), args.inputs[1].data());
                let gx = args.needs[0].then(|| {
                    Tensor::from_fn(args.inputs[0].shape(), |i| {
                        let s = sigmoid(xd[i]);
                        let wc = w[i % cols];
                        g * (-wc * td[i] * (T::one() - s) + (T::one() - td[i]) * s)
                    })
                });
                let gt = args.needs[1].then(|| {
                    Tensor::from_fn(args.inputs[1].shape(), |i| {
                        let wc = w[i % cols];
                        g * (-wc * log_sigmoid(xd[i]) + log_sigmoid(-xd[i]))
                    })
                });
                vec![gx, gt]
            },
        )
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln s(x)` without overflow.
#[inline]
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn reverse_rows<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = (t.rows(), t.cols());
    let mut out = Vec::with_capacity(rows * cols);
    for r in (0..rows).rev() {
        out.extend_from_slice(t.row(r));
    }
    Tensor::from_vec(&[rows, cols], out)
}
