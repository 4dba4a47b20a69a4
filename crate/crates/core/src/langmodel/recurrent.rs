use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Gru, Linear, ParamStore, Var};
use crate::score::NUM_INSTRUMENTS;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecurrentLmConfig {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for RecurrentLmConfig {
    fn default() -> Self {
        RecurrentLmConfig {
            layers: 3,
            hidden: 64,
        }
    }
}

/// Left-to-right GRU language model. Column `n - 1` (silence before the
/// first tatum) is embedded affinely and the output predicts the `M`
/// activations of column `n` as independent Bernoullis.
#[derive(Clone, Debug)]
pub struct RecurrentLm<T: Scalar> {
    pub cfg: RecurrentLmConfig,
    embed: Linear,
    layers: Vec<Gru>,
    out: Linear,
    pub params: ParamStore<T>,
}

impl<T: Scalar> RecurrentLm<T> {
    pub fn new(cfg: RecurrentLmConfig, seed: u64) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 {
            return Err(Error::validation(
                "GRU language model dimensions must be positive",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let h = cfg.hidden;
        let embed = Linear::xavier(&mut params, "lm.embed", NUM_INSTRUMENTS, h, &mut rng);
        let layers = (0..cfg.layers)
            .map(|l| Gru::new(&mut params, &format!("lm.gru{l}"), h, h, &mut rng))
            .collect();
        let out = Linear::xavier(&mut params, "lm.out", h, NUM_INSTRUMENTS, &mut rng);
        Ok(RecurrentLm {
            cfg,
            embed,
            layers,
            out,
            params,
        })
    }

    /// Logits `[N, M]` of `p(Y_n | Y_{<n})` for columns `cols: [N, M]`.
    pub fn logits(&self, g: &mut Graph<T>, cols: Var) -> Var {
        self.logits_with(g, &self.params, cols)
    }

    pub(crate) fn logits_with(&self, g: &mut Graph<T>, params: &ParamStore<T>, cols: Var) -> Var {
        let n = g.shape(cols)[0];
        let start = g.constant(Tensor::zeros(&[1, NUM_INSTRUMENTS]));
        let inputs = if n > 1 {
            let head = g.slice_rows(cols, 0, n - 1);
            g.concat_rows(&[start, head])
        } else {
            start
        };
        let mut h = self.embed.forward(g, params, inputs);
        for layer in &self.layers {
            h = layer.forward(g, params, h, false);
        }
        self.out.forward(g, params, h)
    }

    /// Negative log-likelihood in bits of (possibly relaxed) columns.
    pub fn nll(&self, g: &mut Graph<T>, cols: Var) -> Var {
        self.nll_with(g, &self.params, cols)
    }

    pub(crate) fn nll_with(&self, g: &mut Graph<T>, params: &ParamStore<T>, cols: Var) -> Var {
        let logits = self.logits_with(g, params, cols);
        g.bce_with_logits(
            logits,
            cols,
            &[1.0; NUM_INSTRUMENTS],
            std::f64::consts::LOG2_E,
        )
    }
}
