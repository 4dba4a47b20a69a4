use rand::Rng;

use crate::error::{Error, Result};
use crate::langmodel::{LanguageModel, PseudoMode};
use crate::nn::{Graph, Var};
use crate::score::{DrumScore, OnsetProbabilities, NUM_INSTRUMENTS};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Weighted binary cross entropy in nats:
/// `-sum_{m,n} beta_m y log(phi) + (1 - y) log(1 - phi)`.
pub fn transcription_loss(
    phi: &OnsetProbabilities,
    y: &DrumScore,
    beta: &[f64; NUM_INSTRUMENTS],
) -> Result<f64> {
    if phi.num_tatums() != y.num_tatums() {
        return Err(Error::validation(format!(
            "probabilities cover {} tatums, score has {}",
            phi.num_tatums(),
            y.num_tatums()
        )));
    }
    let mut loss = 0.0;
    for n in 0..y.num_tatums() {
        for (m, &b) in beta.iter().enumerate() {
            let p = phi.get(m, n).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= if y.get(m, n) {
                b * p.ln()
            } else {
                (1.0 - p).ln()
            };
        }
    }
    Ok(loss)
}

/// Graph form of [`transcription_loss`] on logits `[N, M]`.
pub fn transcription_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    target: Var,
    beta: &[f64; NUM_INSTRUMENTS],
) -> Var {
    g.bce_with_logits(logits, target, beta, 1.0)
}

/// Two Gumbel variates per cell, `[N, M]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelNoise {
    pub psi1: Tensor<f64>,
    pub psi2: Tensor<f64>,
}

/// Uniform draw in the open interval (0, 1).
fn open_uniform<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// `-ln(-ln eta)` for `eta ~ U(0, 1)`.
pub fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    -(-open_uniform(rng).ln()).ln()
}

impl GumbelNoise {
    pub fn sample<R: Rng>(tatums: usize, rng: &mut R) -> Self {
        let shape = [tatums, NUM_INSTRUMENTS];
        let psi1 = Tensor::from_fn(&shape, |_| gumbel(rng));
        let psi2 = Tensor::from_fn(&shape, |_| gumbel(rng));
        GumbelNoise { psi1, psi2 }
    }

    /// Equal variates: the relaxation reduces to `sigmoid(phi / tau)`.
    pub fn paired(tatums: usize) -> Self {
        let z = Tensor::zeros(&[tatums, NUM_INSTRUMENTS]);
        GumbelNoise {
            psi1: z.clone(),
            psi2: z,
        }
    }

    pub fn tatums(&self) -> usize {
        self.psi1.rows()
    }

    /// `psi1 - psi2`, logistically distributed.
    pub fn difference(&self) -> Tensor<f64> {
        self.psi1.zip_map(&self.psi2, |a, b| a - b)
    }
}

/// Relaxed activations `sigmoid((phi + psi1 - psi2) / tau)` for
/// probabilities `phi: [N, M]`, differentiable in `phi`.
pub fn gumbel_sigmoid_graph<T: Scalar>(
    g: &mut Graph<T>,
    phi: Var,
    noise: &GumbelNoise,
    tau: f64,
) -> Var {
    assert_eq!(g.shape(phi), noise.psi1.shape(), "noise shape mismatch");
    let d = g.constant(noise.difference().cast());
    let x = g.add(phi, d);
    let x = g.scale(x, 1.0 / tau);
    g.sigmoid(x)
}

/// Samples relaxed activations, tatum-major `[N, M]`. Values that round
/// to 0 or 1 are nudged back inside the open interval.
pub fn gumbel_sigmoid<R: Rng>(phi: &OnsetProbabilities, tau: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::validation("Gumbel temperature must be positive"));
    }
    Ok(phi
        .tatum_major()
        .iter()
        .map(|&p| {
            let d = gumbel(rng) - gumbel(rng);
            crate::nn::ops::sigmoid((p + d) / tau)
                .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
        })
        .collect())
}

/// The pieces of one regularized loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub transcription: Var,
    /// Language-model cost in bits, absent when `gamma = 0`.
    pub language: Option<Var>,
}

/// `L_tran + gamma * L_lang(Y_hat)` with `Y_hat` the Gumbel relaxation of
/// `probs`. With `gamma = 0` the total is the transcription loss node
/// itself.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    logits: Var,
    probs: Var,
    target: Var,
    beta: &[f64; NUM_INSTRUMENTS],
    gamma: f64,
    tau: f64,
    lm: Option<&LanguageModel<T>>,
    noise: &GumbelNoise,
    mode: PseudoMode,
    rng: &mut R,
) -> Result<LossParts> {
    let transcription = transcription_loss_graph(g, logits, target, beta);
    if gamma == 0.0 {
        return Ok(LossParts {
            total: transcription,
            transcription,
            language: None,
        });
    }
    let lm = lm.ok_or_else(|| Error::validation("a positive gamma needs a language model"))?;
    let y_hat = gumbel_sigmoid_graph(g, probs, noise, tau);
    let lang = lm.regularizer(g, y_hat, mode, rng)?;
    let weighted = g.scale(lang, gamma);
    let total = g.add(transcription, weighted);
    Ok(LossParts {
        total,
        transcription,
        language: Some(lang),
    })
}
