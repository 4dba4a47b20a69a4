//! Symbolic drum-score language models: a repetition-aware bi-gram, a GRU
//! model and a masked self-attention model. All likelihoods are in bits.

mod bigram;
mod masked;
mod recurrent;
mod train;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use bigram::{bigram_fit, instrument_nll, transition_counts, BigramParams, LAG};
pub use masked::{mask_count, sample_mask, score_tensor, MaskedLm, MaskedLmConfig};
pub use recurrent::{RecurrentLm, RecurrentLmConfig};
pub use train::{mlm_train, train_lm, LmTrainConfig, LmTrainReport};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamStore, Var};
use crate::score::{DrumScore, NUM_INSTRUMENTS};
use crate::tensor::{Scalar, Tensor};

/// Negative log-likelihood of one score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LMScore {
    /// Total bits.
    pub nll: f64,
    /// Bits per tatum.
    pub per_tatum: Vec<f64>,
}

impl LMScore {
    pub fn from_per_tatum(per_tatum: Vec<f64>) -> Self {
        LMScore {
            nll: per_tatum.iter().sum(),
            per_tatum,
        }
    }

    pub fn num_tatums(&self) -> usize {
        self.per_tatum.len()
    }

    /// `2^(L / N)`.
    pub fn perplexity(&self) -> f64 {
        (self.nll / self.num_tatums().max(1) as f64).exp2()
    }
}

/// Perplexity of a corpus: total bits over total tatums.
pub fn corpus_perplexity(scores: &[LMScore]) -> f64 {
    let bits: f64 = scores.iter().map(|s| s.nll).sum();
    let n: usize = scores.iter().map(|s| s.num_tatums()).sum();
    (bits / n.max(1) as f64).exp2()
}

/// Bi-gram cost of each tatum.
pub fn unidirectional_nll(params: &BigramParams, score: &DrumScore) -> LMScore {
    let per_inst: Vec<Vec<f64>> = (0..NUM_INSTRUMENTS)
        .map(|m| instrument_nll(params, score, m))
        .collect();
    LMScore::from_per_tatum(
        (0..score.num_tatums())
            .map(|n| per_inst.iter().map(|v| v[n]).sum())
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmKind {
    Bigram,
    Gru,
    Mlm,
}

impl std::str::FromStr for LmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bigram" => Ok(LmKind::Bigram),
            "gru" => Ok(LmKind::Gru),
            "mlm" => Ok(LmKind::Mlm),
            other => Err(Error::validation(format!(
                "unknown language model {other:?}"
            ))),
        }
    }
}

/// Serializable description of a language model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LmConfig {
    Bigram(BigramParams),
    Gru(RecurrentLmConfig),
    Mlm(MaskedLmConfig),
}

/// How the masked model's pseudo-likelihood is evaluated inside a loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PseudoMode {
    /// Mask a random `floor(rate * N)` subset and rescale.
    Sampled,
    /// One pass per tatum.
    Exact,
}

#[derive(Clone, Debug)]
pub enum LanguageModel<T: Scalar> {
    Bigram(BigramParams),
    Gru(RecurrentLm<T>),
    Mlm(MaskedLm<T>),
}

impl<T: Scalar> LanguageModel<T> {
    pub fn kind(&self) -> LmKind {
        match self {
            LanguageModel::Bigram(_) => LmKind::Bigram,
            LanguageModel::Gru(_) => LmKind::Gru,
            LanguageModel::Mlm(_) => LmKind::Mlm,
        }
    }

    pub fn config(&self) -> LmConfig {
        match self {
            LanguageModel::Bigram(p) => LmConfig::Bigram(*p),
            LanguageModel::Gru(m) => LmConfig::Gru(m.cfg),
            LanguageModel::Mlm(m) => LmConfig::Mlm(m.cfg),
        }
    }

    pub fn from_config(cfg: LmConfig, seed: u64) -> Result<Self> {
        Ok(match cfg {
            LmConfig::Bigram(p) => LanguageModel::Bigram(p),
            LmConfig::Gru(c) => LanguageModel::Gru(RecurrentLm::new(c, seed)?),
            LmConfig::Mlm(c) => LanguageModel::Mlm(MaskedLm::new(c, seed)?),
        })
    }

    pub fn params(&self) -> Option<&ParamStore<T>> {
        match self {
            LanguageModel::Bigram(_) => None,
            LanguageModel::Gru(m) => Some(&m.params),
            LanguageModel::Mlm(m) => Some(&m.params),
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ParamStore<T>> {
        match self {
            LanguageModel::Bigram(_) => None,
            LanguageModel::Gru(m) => Some(&mut m.params),
            LanguageModel::Mlm(m) => Some(&mut m.params),
        }
    }

    /// Stops gradients from reaching the model's own parameters.
    pub fn freeze(&mut self) {
        if let Some(p) = self.params_mut() {
            p.freeze();
        }
    }

    /// Copies this model's weights into another precision.
    pub fn cast<U: Scalar>(&self) -> Result<LanguageModel<U>> {
        let mut out = LanguageModel::<U>::from_config(self.config(), 0)?;
        if let (Some(src), Some(dst)) = (self.params(), out.params_mut()) {
            let frozen = !src.is_trainable();
            dst.load_from(&src.cast())?;
            if frozen {
                dst.freeze();
            }
        }
        Ok(out)
    }

    /// Bits of a binary score: left-to-right likelihood for the bi-gram and
    /// GRU models, exact pseudo-likelihood for the masked model.
    pub fn score(&self, score: &DrumScore) -> LMScore {
        match self {
            LanguageModel::Bigram(p) => unidirectional_nll(p, score),
            LanguageModel::Gru(m) => {
                let mut g = Graph::inference();
                let c = g.constant(score_tensor::<T>(score));
                let logits = m.logits(&mut g, c);
                let lv = g.value(logits);
                LMScore::from_per_tatum(
                    (0..score.num_tatums())
                        .map(|n| {
                            (0..NUM_INSTRUMENTS)
                                .map(|i| bernoulli_bits(lv.at2(n, i).f64(), score.get(i, n)))
                                .sum()
                        })
                        .collect(),
                )
            }
            LanguageModel::Mlm(m) => LMScore::from_per_tatum(m.pseudo_nll_columns(score)),
        }
    }

    /// Language-model cost in bits of relaxed activations `y_hat: [N, M]`,
    /// differentiable with respect to `y_hat`. The model itself runs in
    /// inference mode.
    pub fn regularizer<R: Rng>(
        &self,
        g: &mut Graph<T>,
        y_hat: Var,
        mode: PseudoMode,
        rng: &mut R,
    ) -> Result<Var> {
        let shape = g.shape(y_hat);
        if shape.len() != 2 || shape[1] != NUM_INSTRUMENTS {
            return Err(Error::validation(format!(
                "language model scores {NUM_INSTRUMENTS} instruments, got activations of shape {shape:?}"
            )));
        }
        let was = g.set_training(false);
        let out = match self {
            LanguageModel::Bigram(p) => bigram_regularizer(g, p, y_hat),
            LanguageModel::Gru(m) => m.nll(g, y_hat),
            LanguageModel::Mlm(m) => match mode {
                PseudoMode::Sampled => m.sampled_pseudo_nll(g, y_hat, rng),
                PseudoMode::Exact => m.exact_pseudo_nll(g, y_hat),
            },
        };
        g.set_training(was);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let empty = ParamStore::<T>::new();
        checkpoint::save(path, self.params().unwrap_or(&empty), &self.config())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: LmConfig = checkpoint::load_config(path)?;
        let mut model = Self::from_config(cfg, 0)?;
        if let Some(p) = model.params_mut() {
            checkpoint::load_params(path, p)?;
        }
        Ok(model)
    }
}

fn bernoulli_bits(logit: f64, on: bool) -> f64 {
    let ls = crate::nn::ops::log_sigmoid(if on { logit } else { -logit });
    -ls * std::f64::consts::LOG2_E
}

/// Bi-gram cost with the activation one bar earlier interpolating the two
/// transition probabilities: `p = y[n-16] * pi11 + (1 - y[n-16]) * pi01`.
fn bigram_regularizer<T: Scalar>(g: &mut Graph<T>, params: &BigramParams, y: Var) -> Var {
    let n = g.shape(y)[0];
    let (p0, p1) = (params.p_on(false), params.p_on(true));
    let lead = g.constant(Tensor::zeros(&[n.min(LAG), NUM_INSTRUMENTS]));
    let prev = if n > LAG {
        let body = g.slice_rows(y, 0, n - LAG);
        g.concat_rows(&[lead, body])
    } else {
        lead
    };
    let p = g.scale(prev, p1 - p0);
    let p = g.add_scalar(p, p0);
    let q = g.one_minus(p);
    let lp = g.ln(p, 1e-300);
    let lq = g.ln(q, 1e-300);
    let on = g.mul(y, lp);
    let not_y = g.one_minus(y);
    let off = g.mul(not_y, lq);
    let ll = g.add(on, off);
    let total = g.sum_all(ll);
    g.scale(total, -std::f64::consts::LOG2_E)
}
