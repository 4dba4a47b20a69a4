//! Spectrogram-shaped ops on `[channels, freq, time]` tensors.

use super::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// Elements of an im2col buffer per chunk.
const COLS_BUDGET: usize = 1 << 21;

/// Fills `cols` (`[cin * 9, (f1 - f0) * t]`) for frequency rows `f0..f1`.
fn im2col<T: Scalar>(
    x: &[T],
    cin: usize,
    f: usize,
    t: usize,
    f0: usize,
    f1: usize,
    cols: &mut [T],
) {
    let width = (f1 - f0) * t;
    for ci in 0..cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * width;
                for fr in f0..f1 {
                    let dst = &mut cols[row + (fr - f0) * t..row + (fr - f0 + 1) * t];
                    let src_f = fr as isize + ky as isize - 1;
                    if src_f < 0 || src_f >= f as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * f + src_f as usize) * t..(ci * f + src_f as usize + 1) * t];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..t - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..t - 1].copy_from_slice(&src[1..]);
                            dst[t - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into `dx`; inverse layout of [`im2col`].
fn col2im<T: Scalar>(
    cols: &[T],
    cin: usize,
    f: usize,
    t: usize,
    f0: usize,
    f1: usize,
    dx: &mut [T],
) {
    let width = (f1 - f0) * t;
    for ci in 0..cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * width;
                for fr in f0..f1 {
                    let src_f = fr as isize + ky as isize - 1;
                    if src_f < 0 || src_f >= f as isize {
                        continue;
                    }
                    let c = &cols[row + (fr - f0) * t..row + (fr - f0 + 1) * t];
                    let base = (ci * f + src_f as usize) * t;
                    let d = &mut dx[base..base + t];
                    match kx {
                        0 => {
                            for (dv, &cv) in d[..t - 1].iter_mut().zip(&c[1..]) {
                                *dv += cv;
                            }
                        }
                        1 => {
                            for (dv, &cv) in d.iter_mut().zip(c) {
                                *dv += cv;
                            }
                        }
                        _ => {
                            for (dv, &cv) in d[1..].iter_mut().zip(&c[..t - 1]) {
                                *dv += cv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn rows_per_chunk(cin: usize, f: usize, t: usize) -> usize {
    (COLS_BUDGET / (cin * 9 * t).max(1)).clamp(1, f)
}

impl<T: Scalar> Graph<T> {
    /// 3x3 convolution with zero padding 1 on `[cin, f, t]`; weight is
    /// `[cout, cin * 9]` and bias `[cout]`.
    pub fn conv3x3(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let [cin, f, t] = <[usize; 3]>::try_from(xv.shape()).expect("conv input must be 3-D");
        let wv = self.value(weight);
        let cout = wv.rows();
        let k = cin * 9;
        assert_eq!(wv.cols(), k, "conv weight shape");
        assert!(t >= 1);
        let p = f * t;
        let chunk = rows_per_chunk(cin, f, t);
        let mut out = Tensor::<T>::zeros(&[cout, f, t]);
        let mut cols = vec![T::zero(); k * chunk * t];
        let mut f0 = 0;
        while f0 < f {
            let f1 = (f0 + chunk).min(f);
            let w = (f1 - f0) * t;
            im2col(xv.data(), cin, f, t, f0, f1, &mut cols);
            // SAFETY: out is cout x p; writing the column block [f0*t, f1*t).
            unsafe {
                T::gemm_raw(
                    cout,
                    k,
                    w,
                    T::one(),
                    wv.data().as_ptr(),
                    k as isize,
                    1,
                    cols.as_ptr(),
                    w as isize,
                    1,
                    T::zero(),
                    out.data_mut().as_mut_ptr().add(f0 * t),
                    p as isize,
                    1,
                );
            }
            f0 = f1;
        }
        let bd = self.value(bias).data().to_vec();
        for (co, plane) in out.data_mut().chunks_mut(p).enumerate() {
            for v in plane {
                *v += bd[co];
            }
        }
        self.push(out, &[x, weight, bias], move |args| {
            let (xd, wd) = (args.inputs[0].data(), args.inputs[1].data());
            let g = args.grad.data();
            let mut gw = args.needs[1].then(|| Tensor::zeros(&[cout, k]));
            let mut gx = args.needs[0].then(|| Tensor::zeros(&[cin, f, t]));
            let gb = args.needs[2].then(|| {
                Tensor::from_vec(
                    &[cout],
                    g.chunks(p)
                        .map(|plane| plane.iter().copied().sum())
                        .collect(),
                )
            });
            let mut cols = vec![T::zero(); k * chunk * t];
            let mut dcols = vec![T::zero(); if gx.is_some() { k * chunk * t } else { 0 }];
            let mut f0 = 0;
            while f0 < f {
                let f1 = (f0 + chunk).min(f);
                let w = (f1 - f0) * t;
                if let Some(gw) = gw.as_mut() {
                    im2col(xd, cin, f, t, f0, f1, &mut cols);
                    // SAFETY: grad block is cout x w with row stride p; cols is k x w.
                    unsafe {
                        T::gemm_raw(
                            cout,
                            w,
                            k,
                            T::one(),
                            g.as_ptr().add(f0 * t),
                            p as isize,
                            1,
                            cols.as_ptr(),
                            1,
                            w as isize,
                            T::one(),
                            gw.data_mut().as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    // SAFETY: weight^T is k x cout; grad block cout x w.
                    unsafe {
                        T::gemm_raw(
                            k,
                            cout,
                            w,
                            T::one(),
                            wd.as_ptr(),
                            1,
                            k as isize,
                            g.as_ptr().add(f0 * t),
                            p as isize,
                            1,
                            T::zero(),
                            dcols.as_mut_ptr(),
                            w as isize,
                            1,
                        );
                    }
                    col2im(&dcols[..k * w], cin, f, t, f0, f1, gx.data_mut());
                }
                f0 = f1;
            }
            vec![gx, gw, gb]
        })
    }

    /// Per-channel normalization of `[c, f, t]`. With `stats = None` the
    /// batch mean and biased variance are used and returned; otherwise the
    /// given `(mean, var)` are applied as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        stats: Option<(&[T], &[T])>,
        eps: f64,
    ) -> (Var, Option<(Vec<T>, Vec<T>)>) {
        let xv = self.value(x);
        let c = xv.shape()[0];
        let p = xv.len() / c;
        let n = T::of(p as f64);
        let eps = T::of(eps);
        let (mean, var, batch) = match stats {
            Some((m, v)) => (m.to_vec(), v.to_vec(), false),
            None => {
                let mut mean = Vec::with_capacity(c);
                let mut var = Vec::with_capacity(c);
                for plane in xv.data().chunks(p) {
                    let m = plane.iter().copied().sum::<T>() / n;
                    let v = plane.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
                    mean.push(m);
                    var.push(v);
                }
                (mean, var, true)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gd = self.value(gain).data().to_vec();
        let bd = self.value(bias).data().to_vec();
        let mut xhat = xv.clone();
        for (ch, plane) in xhat.data_mut().chunks_mut(p).enumerate() {
            for v in plane {
                *v = (*v - mean[ch]) * inv_std[ch];
            }
        }
        let mut out = xhat.clone();
        for (ch, plane) in out.data_mut().chunks_mut(p).enumerate() {
            for v in plane {
                *v = *v * gd[ch] + bd[ch];
            }
        }
        let returned = batch.then(|| (mean.clone(), var.clone()));
        let var_out = self.push(out, &[x, gain, bias], move |args| {
            let g = args.grad.data();
            let gain = args.inputs[1].data();
            let mut gx = Tensor::zeros(args.inputs[0].shape());
            let mut ggain = vec![T::zero(); c];
            let mut gbias = vec![T::zero(); c];
            for ch in 0..c {
                let gp = &g[ch * p..(ch + 1) * p];
                let xp = &xhat.data()[ch * p..(ch + 1) * p];
                let (mut sg, mut sgx) = (T::zero(), T::zero());
                for (&gv, &xh) in gp.iter().zip(xp) {
                    sg += gv;
                    sgx += gv * xh;
                }
                ggain[ch] = sgx;
                gbias[ch] = sg;
                let scale = gain[ch] * inv_std[ch];
                let dst = &mut gx.data_mut()[ch * p..(ch + 1) * p];
                if batch {
                    for ((d, &gv), &xh) in dst.iter_mut().zip(gp).zip(xp) {
                        *d = scale * (gv - sg / n - xh * sgx / n);
                    }
                } else {
                    for (d, &gv) in dst.iter_mut().zip(gp) {
                        *d = scale * gv;
                    }
                }
            }
            vec![
                Some(gx),
                Some(Tensor::from_vec(args.inputs[1].shape(), ggain)),
                Some(Tensor::from_vec(args.inputs[2].shape(), gbias)),
            ]
        });
        (var_out, returned)
    }

    /// Non-overlapping max-pool of size `k` along the frequency axis.
    pub fn max_pool_freq(&mut self, x: Var, k: usize) -> Var {
        let xv = self.value(x);
        let [c, f, t] = <[usize; 3]>::try_from(xv.shape()).expect("pool input must be 3-D");
        let fo = f / k;
        assert!(fo >= 1, "frequency axis {f} smaller than pool {k}");
        let mut out = Vec::with_capacity(c * fo * t);
        let mut arg = Vec::with_capacity(c * fo * t);
        let d = xv.data();
        for ch in 0..c {
            for fb in 0..fo {
                for tt in 0..t {
                    let mut best = (ch * f + fb * k) * t + tt;
                    for j in 1..k {
                        let idx = (ch * f + fb * k + j) * t + tt;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    arg.push(best);
                    out.push(d[best]);
                }
            }
        }
        self.push(Tensor::from_vec(&[c, fo, t], out), &[x], move |args| {
            let mut gx = Tensor::zeros(&[c, f, t]);
            for (i, &src) in arg.iter().enumerate() {
                gx.data_mut()[src] += args.grad.data()[i];
            }
            vec![Some(gx)]
        })
    }

    /// `[c, f, t]` to `[t, c * f]` with time on the rows.
    pub fn time_major(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let r = self.reshape(x, &[shape[0] * shape[1], shape[2]]);
        self.transpose(r)
    }
}

/// Plain reference convolution used by tests.
#[cfg(test)]
pub(crate) fn conv3x3_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Tensor<f64> {
    let [cin, f, t] = <[usize; 3]>::try_from(x.shape()).unwrap();
    let cout = w.rows();
    let mut out = Tensor::zeros(&[cout, f, t]);
    for co in 0..cout {
        for fr in 0..f {
            for tt in 0..t {
                let mut acc = b[co];
                for ci in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sf = fr as isize + ky as isize - 1;
                            let st = tt as isize + kx as isize - 1;
                            if sf < 0 || st < 0 || sf >= f as isize || st >= t as isize {
                                continue;
                            }
                            acc += w.at2(co, ci * 9 + ky * 3 + kx)
                                * x.data()[(ci * f + sf as usize) * t + st as usize];
                        }
                    }
                }
                out.data_mut()[(co * f + fr) * t + tt] = acc;
            }
        }
    }
    out
}
