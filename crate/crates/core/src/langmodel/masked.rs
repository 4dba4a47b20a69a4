use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    AttentionConfig, AttentionStack, Graph, Init, Linear, ParamId, ParamKind, ParamStore, Var,
};
use crate::posenc::{EncodingKind, PositionalEncoding};
use crate::score::{DrumScore, NUM_INSTRUMENTS};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskedLmConfig {
    pub heads: usize,
    pub layers: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub dropout: f64,
    pub encoding: EncodingKind,
    pub mask_rate: f64,
}

impl Default for MaskedLmConfig {
    fn default() -> Self {
        MaskedLmConfig {
            heads: 4,
            layers: 8,
            d_model: 112,
            d_ffn: 448,
            dropout: 0.1,
            encoding: EncodingKind::Sync,
            mask_rate: 0.15,
        }
    }
}

impl MaskedLmConfig {
    fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            heads: self.heads,
            layers: self.layers,
            d_model: self.d_model,
            d_ffn: self.d_ffn,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::validation("mask_rate must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Number of columns masked in a sequence of `n` tatums: `floor(rate * n)`,
/// at least one.
pub fn mask_count(n: usize, rate: f64) -> usize {
    ((rate * n as f64).floor() as usize).clamp(1, n.max(1))
}

/// Distinct column indices to mask, sorted.
pub fn sample_mask<R: Rng>(n: usize, rate: f64, rng: &mut R) -> Vec<usize> {
    let mut rows = index::sample(rng, n, mask_count(n, rate)).into_vec();
    rows.sort_unstable();
    rows
}

/// Bidirectional self-attention model over score columns. Masked
/// columns are replaced by a learned embedding.
#[derive(Clone, Debug)]
pub struct MaskedLm<T: Scalar> {
    pub cfg: MaskedLmConfig,
    embed: Linear,
    mask: ParamId,
    stack: AttentionStack,
    out: Linear,
    pub params: ParamStore<T>,
}

impl<T: Scalar> MaskedLm<T> {
    pub fn new(cfg: MaskedLmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = cfg.d_model;
        let embed = Linear::xavier(&mut params, "mlm.embed", NUM_INSTRUMENTS, d, &mut rng);
        let mask = params.add(
            "mlm.mask",
            Init::Uniform {
                low: -1.0,
                high: 1.0,
            }
            .sample(&[d], &mut rng),
            ParamKind::NoDecay,
        );
        let stack = AttentionStack::new(&mut params, "mlm.stack", cfg.attention(), &mut rng)?;
        // small output weights: near-uniform predictions before training
        let out = Linear::new(
            &mut params,
            "mlm.out",
            d,
            NUM_INSTRUMENTS,
            Init::XavierUniform {
                fan_in: d,
                fan_out: NUM_INSTRUMENTS,
                gain: 0.1,
            },
            0.0,
            &mut rng,
        );
        Ok(MaskedLm {
            cfg,
            embed,
            mask,
            stack,
            out,
            params,
        })
    }

    /// Logits `[N, M]` for columns `cols: [N, M]` with rows `masked`
    /// hidden from the model.
    pub fn logits(&self, g: &mut Graph<T>, cols: Var, masked: &[usize]) -> Var {
        self.logits_with(g, &self.params, cols, masked)
    }

    pub(crate) fn logits_with(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        cols: Var,
        masked: &[usize],
    ) -> Var {
        let n = g.shape(cols)[0];
        let mut x = self.embed.forward(g, params, cols);
        if !masked.is_empty() {
            let m = g.param(params, self.mask);
            x = g.replace_rows(x, masked, m);
        }
        if self.cfg.encoding != EncodingKind::None {
            let pe = PositionalEncoding::new(self.cfg.encoding, self.cfg.d_model, n)
                .expect("validated dimensions")
                .tatum_major::<T>();
            let e = g.constant(pe);
            x = g.add(x, e);
        }
        let (h, _) = self.stack.forward(g, params, x);
        self.out.forward(g, params, h)
    }

    /// Bits of the masked rows of `targets` given the unmasked rows of
    /// `cols`, multiplied by `scale`.
    pub fn masked_nll(
        &self,
        g: &mut Graph<T>,
        cols: Var,
        targets: Var,
        masked: &[usize],
        scale: f64,
    ) -> Var {
        self.masked_nll_with(g, &self.params, cols, targets, masked, scale)
    }

    pub(crate) fn masked_nll_with(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        cols: Var,
        targets: Var,
        masked: &[usize],
        scale: f64,
    ) -> Var {
        let logits = self.logits_with(g, params, cols, masked);
        let pick = |g: &mut Graph<T>, v: Var| {
            let rows: Vec<Var> = masked.iter().map(|&r| g.slice_rows(v, r, 1)).collect();
            if rows.len() == 1 {
                rows[0]
            } else {
                g.concat_rows(&rows)
            }
        };
        let l = pick(g, logits);
        let t = pick(g, targets);
        g.bce_with_logits(
            l,
            t,
            &[1.0; NUM_INSTRUMENTS],
            scale * std::f64::consts::LOG2_E,
        )
    }

    /// Sampled pseudo-likelihood: masks `floor(rate * N)` columns at once
    /// and rescales their bits by `N / k`, an unbiased estimate of the
    /// one-column-at-a-time sum.
    pub fn sampled_pseudo_nll<R: Rng>(&self, g: &mut Graph<T>, cols: Var, rng: &mut R) -> Var {
        let n = g.shape(cols)[0];
        let masked = sample_mask(n, self.cfg.mask_rate, rng);
        let scale = n as f64 / masked.len() as f64;
        self.masked_nll(g, cols, cols, &masked, scale)
    }

    /// Exact pseudo-likelihood: one pass per column.
    pub fn exact_pseudo_nll(&self, g: &mut Graph<T>, cols: Var) -> Var {
        let n = g.shape(cols)[0];
        let terms: Vec<Var> = (0..n)
            .map(|r| self.masked_nll(g, cols, cols, &[r], 1.0))
            .collect();
        g.sum_scalars(&terms)
    }

    /// Per-column bits with each column masked in turn.
    pub fn pseudo_nll_columns(&self, score: &DrumScore) -> Vec<f64> {
        let cols = score_tensor::<T>(score);
        (0..score.num_tatums())
            .map(|r| {
                let mut g = Graph::inference();
                let c = g.constant(cols.clone());
                let v = self.masked_nll(&mut g, c, c, &[r], 1.0);
                g.value(v).item().f64()
            })
            .collect()
    }

    /// Fraction of masked columns whose three activations are all
    /// predicted correctly at threshold 0.5, masking as in training.
    pub fn masked_recovery<R: Rng>(&self, corpus: &[DrumScore], rng: &mut R) -> f64 {
        self.recovery_with(&self.params, corpus, rng)
    }

    pub(crate) fn recovery_with<R: Rng>(
        &self,
        params: &ParamStore<T>,
        corpus: &[DrumScore],
        rng: &mut R,
    ) -> f64 {
        let (mut hit, mut total) = (0usize, 0usize);
        for s in corpus {
            let masked = sample_mask(s.num_tatums(), self.cfg.mask_rate, rng);
            let mut g = Graph::inference();
            let c = g.constant(score_tensor::<T>(s));
            let logits = self.logits_with(&mut g, params, c, &masked);
            let lv = g.value(logits);
            for &r in &masked {
                total += 1;
                let col = s.column(r);
                hit += (0..NUM_INSTRUMENTS).all(|m| (lv.at2(r, m) > T::zero()) == col[m]) as usize;
            }
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

/// `[N, M]` 0/1 tensor of a score.
pub fn score_tensor<T: Scalar>(score: &DrumScore) -> Tensor<T> {
    Tensor::from_vec(
        &[score.num_tatums(), NUM_INSTRUMENTS],
        score.to_matrix().into_iter().map(T::of).collect(),
    )
}
