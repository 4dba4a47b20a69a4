//! Pre-Norm multi-head self-attention stack shared by the transcription
//! decoder and the masked language model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::layers::{LayerNorm, Linear};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub heads: usize,
    pub layers: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub dropout: f64,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.layers == 0 || self.d_model == 0 || self.d_ffn == 0 {
            return Err(Error::validation("attention dimensions must be positive"));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::validation(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Debug)]
pub struct AttentionBlock {
    norm: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    ffn_in: Linear,
    ffn_out: Linear,
}

impl AttentionBlock {
    fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &AttentionConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.d_model;
        AttentionBlock {
            norm: LayerNorm::new(store, &format!("{name}.norm"), d),
            query: Linear::xavier(store, &format!("{name}.query"), d, d, rng),
            key: Linear::xavier(store, &format!("{name}.key"), d, d, rng),
            value: Linear::xavier(store, &format!("{name}.value"), d, d, rng),
            ffn_in: Linear::new(
                store,
                &format!("{name}.ffn_in"),
                d,
                cfg.d_ffn,
                super::layers::Init::HeUniform { fan_in: d },
                0.0,
                rng,
            ),
            ffn_out: Linear::xavier(store, &format!("{name}.ffn_out"), cfg.d_ffn, d, rng),
        }
    }

    /// One block: heads attend over `LayerNorm(z)`, then
    /// `z <- FFN(Dropout(H) + z)`. Returns the new `z` and the per-head
    /// attention matrix vars.
    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        z: Var,
        cfg: &AttentionConfig,
    ) -> (Var, Vec<Var>) {
        let dk = cfg.head_dim();
        let normed = self.norm.forward(g, store, z);
        let q = self.query.forward(g, store, normed);
        let k = self.key.forward(g, store, normed);
        let v = self.value.forward(g, store, normed);
        let scale = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(cfg.heads);
        let mut maps = Vec::with_capacity(cfg.heads);
        for i in 0..cfg.heads {
            let qi = g.slice_cols(q, i * dk, dk);
            let ki = g.slice_cols(k, i * dk, dk);
            let vi = g.slice_cols(v, i * dk, dk);
            let e = g.matmul_t(qi, ki, false, true);
            let e = g.scale(e, scale);
            let alpha = g.softmax_rows(e);
            maps.push(alpha);
            heads.push(g.matmul(alpha, vi));
        }
        let h = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)
        };
        let h = g.dropout(h, cfg.dropout);
        let u = g.add(h, z);
        let hidden = self.ffn_in.forward(g, store, u);
        let hidden = g.relu(hidden);
        (self.ffn_out.forward(g, store, hidden), maps)
    }
}

/// `layers` attention blocks followed by a final LayerNorm.
#[derive(Clone, Debug)]
pub struct AttentionStack {
    pub cfg: AttentionConfig,
    blocks: Vec<AttentionBlock>,
    final_norm: LayerNorm,
}

/// Attention matrices of one forward pass, indexed `[layer][head]`, each
/// `[n, n]` with rows summing to one.
pub type AttentionMaps<T> = Vec<Vec<Tensor<T>>>;

impl AttentionStack {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: AttentionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.layers)
            .map(|l| AttentionBlock::new(store, &format!("{name}.block{l}"), &cfg, rng))
            .collect();
        Ok(AttentionStack {
            cfg,
            blocks,
            final_norm: LayerNorm::new(store, &format!("{name}.final_norm"), cfg.d_model),
        })
    }

    /// Maps `z: [n, d_model]` through all blocks; the second result holds
    /// attention-matrix vars per layer and head.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        mut z: Var,
    ) -> (Var, Vec<Vec<Var>>) {
        let mut maps = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, m) = block.forward(g, store, z, &self.cfg);
            z = next;
            maps.push(m);
        }
        (self.final_norm.forward(g, store, z), maps)
    }
}

pub fn collect_maps<T: Scalar>(g: &Graph<T>, vars: &[Vec<Var>]) -> AttentionMaps<T> {
    vars.iter()
        .map(|layer| layer.iter().map(|&v| g.value(v).clone()).collect())
        .collect()
}
