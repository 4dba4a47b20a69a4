//! Finite-difference gradient checks.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamKind, ParamStore};

/// Agreement between analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub passed: usize,
    pub worst_relative: f64,
}

impl GradReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

/// Compares gradients of the scalar `loss` with respect to the listed
/// `(parameter, element)` coordinates. A coordinate passes when the
/// relative error is at most `rel_tol` (or the absolute error is below
/// `1e-10` for vanishing gradients).
pub fn store_agreement<F>(
    store: &ParamStore<f64>,
    coords: &[(ParamId, usize)],
    h: f64,
    rel_tol: f64,
    loss: F,
) -> GradReport
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var,
{
    let mut g = Graph::inference();
    let root = loss(&mut g, store);
    let grads = g.backward(root).for_store(&g, store);
    let eval = |s: &ParamStore<f64>| {
        let mut g = Graph::inference();
        let root = loss(&mut g, s);
        g.value(root).item()
    };
    let mut report = GradReport {
        checked: 0,
        passed: 0,
        worst_relative: 0.0,
    };
    let mut probe = store.clone();
    for &(id, j) in coords {
        let orig = probe.get(id).data()[j];
        probe.get_mut(id).data_mut()[j] = orig + h;
        let fp = eval(&probe);
        probe.get_mut(id).data_mut()[j] = orig - h;
        let fm = eval(&probe);
        probe.get_mut(id).data_mut()[j] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = grads[id.index()].as_ref().map_or(0.0, |t| t.data()[j]);
        let err = (analytic - numeric).abs();
        let rel = err / analytic.abs().max(numeric.abs()).max(1e-300);
        report.checked += 1;
        if rel <= rel_tol || err < 1e-10 {
            report.passed += 1;
        }
        if err >= 1e-10 {
            report.worst_relative = report.worst_relative.max(rel);
        }
    }
    report
}

/// Every trainable element of `store`, optionally subsampled to `limit`
/// coordinates with a fixed stride.
pub fn all_coords(store: &ParamStore<f64>, limit: Option<usize>) -> Vec<(ParamId, usize)> {
    let all: Vec<(ParamId, usize)> = store
        .ids()
        .filter(|&id| store.kind(id) != ParamKind::Buffer)
        .flat_map(|id| (0..store.get(id).len()).map(move |j| (id, j)))
        .collect();
    match limit {
        Some(k) if k < all.len() => {
            let stride = all.len() as f64 / k as f64;
            (0..k).map(|i| all[(i as f64 * stride) as usize]).collect()
        }
        _ => all,
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Tensor;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Builds `sum(out * probe)` and compares analytic and numeric gradients
    /// for every input.
    fn check<F>(inputs: Vec<Tensor<f64>>, build: F)
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eval = |vals: &[Tensor<f64>],
                    probe: Option<&Tensor<f64>>|
         -> (f64, Option<Tensor<f64>>, Graph<f64>, Vec<Var>) {
            let mut g = Graph::inference();
            let vars: Vec<Var> = vals.iter().map(|v| g.variable(v.clone())).collect();
            let out = build(&mut g, &vars);
            let out_val = g.value(out).clone();
            let probe = probe.cloned().unwrap_or_else(|| out_val.map(|_| 0.0));
            let pv = g.constant(probe.clone());
            let prod = g.mul(out, pv);
            let loss = g.sum_all(prod);
            (g.value(loss).item(), Some(out_val), g, vec![loss])
        };
        let (_, out_val, _, _) = eval(&inputs, None);
        let probe = random(out_val.unwrap().shape(), &mut rng);

        let mut g = Graph::inference();
        let vars: Vec<Var> = inputs.iter().map(|v| g.variable(v.clone())).collect();
        let out = build(&mut g, &vars);
        let pv = g.constant(probe.clone());
        let prod = g.mul(out, pv);
        let loss = g.sum_all(prod);
        let grads = g.backward(loss);

        let h = 1e-6;
        for (i, input) in inputs.iter().enumerate() {
            let analytic = grads
                .get(vars[i])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(input.shape()));
            for j in 0..input.len() {
                let mut plus = inputs.clone();
                plus[i].data_mut()[j] += h;
                let mut minus = inputs.clone();
                minus[i].data_mut()[j] -= h;
                let fp = eval(&plus, Some(&probe)).0;
                let fm = eval(&minus, Some(&probe)).0;
                let numeric = (fp - fm) / (2.0 * h);
                let a = analytic.data()[j];
                let tol = 1e-6 * (1.0 + numeric.abs().max(a.abs()));
                assert!(
                    (a - numeric).abs() <= tol,
                    "input {i} element {j}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[3, 4], &mut rng);
        check(vec![a.clone(), b.clone()], |g, v| {
            let s = g.add(v[0], v[1]);
            let d = g.sub(s, v[1]);
            let m = g.mul(d, v[1]);
            let t = g.tanh(m);
            let sg = g.sigmoid(t);
            let om = g.one_minus(sg);
            let sc = g.scale(om, 1.7);
            g.add_scalar(sc, 0.3)
        });
        let pos = a.map(|x| x.abs() + 0.3);
        check(vec![pos], |g, v| g.ln(v[0], 1e-7));
        // relu away from the kink
        let shifted = a.map(|x| if x.abs() < 0.05 { x + 0.2 } else { x });
        check(vec![shifted], |g, v| g.relu(v[0]));
    }

    #[test]
    fn matmul_all_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a = if ta {
                random(&[4, 3], &mut rng)
            } else {
                random(&[3, 4], &mut rng)
            };
            let b = if tb {
                random(&[5, 4], &mut rng)
            } else {
                random(&[4, 5], &mut rng)
            };
            check(vec![a, b], move |g, v| g.matmul_t(v[0], v[1], ta, tb));
        }
    }

    #[test]
    fn row_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[4, 6], &mut rng);
        let b = random(&[6], &mut rng);
        check(vec![x.clone(), b.clone()], |g, v| g.add_row(v[0], v[1]));
        check(vec![x.clone()], |g, v| g.softmax_rows(v[0]));
        let gain = random(&[6], &mut rng);
        check(vec![x.clone(), gain, b.clone()], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-5)
        });
        check(vec![x.clone()], |g, v| {
            let a = g.slice_cols(v[0], 1, 3);
            let c = g.slice_cols(v[0], 4, 2);
            let cat = g.concat_cols(&[c, a]);
            let r = g.slice_rows(cat, 1, 2);
            let r2 = g.slice_rows(cat, 0, 1);
            let both = g.concat_rows(&[r, r2, r]);
            let tr = g.transpose(both);
            let rs = g.reshape(tr, &[25, 1]);
            g.reverse_rows(rs)
        });
        let v = random(&[6], &mut rng);
        check(vec![x.clone(), v], |g, vars| {
            g.replace_rows(vars[0], &[0, 2], vars[1])
        });
        check(vec![x], |g, v| {
            g.segment_max_rows(v[0], &[(0, 2), (2, 3), (3, 4)])
        });
    }

    #[test]
    fn bce_grads_reach_logits_and_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[5, 3], &mut rng).map(|v| 3.0 * v);
        let t = Tensor::from_fn(&[5, 3], |_| rng.random_range(0.05..0.95));
        check(vec![x, t], |g, v| {
            g.bce_with_logits(v[0], v[1], &[0.6, 1.0, 2.0], 0.7)
        });
    }

    #[test]
    fn conv_and_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 8, 5], &mut rng);
        let w = random(&[3, 18], &mut rng);
        let b = random(&[3], &mut rng);
        // conv agrees with the direct definition
        {
            let mut g = Graph::inference();
            let (xv, wv, bv) = (
                g.constant(x.clone()),
                g.constant(w.clone()),
                g.constant(b.clone()),
            );
            let y = g.conv3x3(xv, wv, bv);
            let naive = crate::nn::conv::conv3x3_naive(&x, &w, b.data());
            for (p, q) in g.value(y).data().iter().zip(naive.data()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
        check(vec![x.clone(), w, b], |g, v| g.conv3x3(v[0], v[1], v[2]));
        check(vec![x.clone()], |g, v| g.max_pool_freq(v[0], 4));
        check(vec![x.clone()], |g, v| g.time_major(v[0]));
        let gain = random(&[2], &mut rng);
        let bias = random(&[2], &mut rng);
        check(vec![x.clone(), gain.clone(), bias.clone()], |g, v| {
            g.batch_norm(v[0], v[1], v[2], None, 1e-5).0
        });
        check(vec![x, gain, bias], |g, v| {
            g.batch_norm(v[0], v[1], v[2], Some((&[0.1, -0.2], &[0.5, 2.0])), 1e-5)
                .0
        });
    }

    /// Like [`check`] but perturbs every entry of a parameter store.
    pub(crate) fn check_store<F>(store: &ParamStore<f64>, build: F)
    where
        F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var,
    {
        let scalar_loss = |s: &ParamStore<f64>| {
            let mut g = Graph::inference();
            let out = build(&mut g, s);
            let loss = g.sum_all(out);
            g.value(loss).item()
        };
        let mut g = Graph::inference();
        let out = build(&mut g, store);
        let loss = g.sum_all(out);
        let grads = g.backward(loss).for_store(&g, store);
        let h = 1e-6;
        for id in store.ids() {
            if store.kind(id) == ParamKind::Buffer {
                continue;
            }
            let analytic = grads[id.index()]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
            for j in 0..store.get(id).len() {
                let mut plus = store.clone();
                plus.get_mut(id).data_mut()[j] += h;
                let mut minus = store.clone();
                minus.get_mut(id).data_mut()[j] -= h;
                let numeric = (scalar_loss(&plus) - scalar_loss(&minus)) / (2.0 * h);
                let a = analytic.data()[j];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "{}[{j}]: analytic {a} vs numeric {numeric}",
                    store.name(id)
                );
            }
        }
    }

    #[test]
    fn gru_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::<f64>::new();
        let gru = crate::nn::layers::Gru::new(&mut store, "gru", 3, 4, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            if store.kind(id) == ParamKind::NoDecay {
                *store.get_mut(id) = random(store.get(id).shape(), &mut rng);
            }
        }
        let x = random(&[5, 3], &mut rng);
        let probe = random(&[5, 4], &mut rng);
        for reverse in [false, true] {
            check_store(&store, |g, s| {
                let xv = g.constant(x.clone());
                let out = gru.forward(g, s, xv, reverse);
                let p = g.constant(probe.clone());
                g.mul(out, p)
            });
            let gru = gru.clone();
            let store = store.clone();
            check(vec![x.clone()], move |g, v| {
                gru.forward(g, &store, v[0], reverse)
            });
        }
    }
}
