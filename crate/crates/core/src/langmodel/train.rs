use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::masked::{sample_mask, score_tensor, MaskedLm, MaskedLmConfig};
use super::{bigram_fit, LanguageModel};
use crate::error::{Error, Result};
use crate::nn::optim::{accumulate_grads, clip_grad_norm, scale_grads};
use crate::nn::{AdamW, Graph, ParamStore, Var};
use crate::score::DrumScore;
use crate::tensor::Scalar;
use crate::training::schedule::LrSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Longer scores are cut into non-overlapping chunks of this many
    /// tatums.
    pub max_len: usize,
    pub seed: u64,
    /// Wall-clock limit in seconds, checked between epochs.
    pub time_budget_secs: Option<f64>,
    /// Stop once masked-column recovery on the training corpus reaches
    /// this fraction (masked model only).
    pub target_recovery: Option<f64>,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            epochs: 30,
            batch_size: 10,
            schedule: LrSchedule::warmup_with_peak(1e-3, 112, 200),
            weight_decay: 1e-4,
            clip_norm: Some(1.0),
            max_len: 256,
            seed: 0,
            time_budget_secs: None,
            target_recovery: None,
        }
    }
}

impl LmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.max_len == 0 {
            return Err(Error::validation(
                "epochs, batch_size and max_len must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LmTrainReport {
    pub steps: u64,
    /// Mean loss per epoch: bits per masked column (masked model) or per
    /// tatum (GRU).
    pub epoch_losses: Vec<f64>,
    /// Masked-column recovery after each epoch when tracked.
    pub recovery: Vec<f64>,
    pub elapsed_secs: f64,
}

fn chunks(corpus: &[DrumScore], max_len: usize) -> Vec<DrumScore> {
    let mut out = Vec::new();
    for s in corpus {
        let mut start = 0;
        while start < s.num_tatums() {
            let len = max_len.min(s.num_tatums() - start);
            out.push(s.slice(start, len));
            start += len;
        }
    }
    out
}

/// Trains `model` on `corpus`. The bi-gram is fitted in closed form; the
/// neural models are optimized with AdamW.
pub fn train_lm<T: Scalar>(
    model: &mut LanguageModel<T>,
    corpus: &[DrumScore],
    cfg: &LmTrainConfig,
) -> Result<LmTrainReport> {
    if corpus.is_empty() {
        return Err(Error::validation(
            "cannot train a language model on an empty corpus",
        ));
    }
    cfg.validate()?;
    match model {
        LanguageModel::Bigram(p) => {
            *p = bigram_fit(corpus)?;
            Ok(LmTrainReport::default())
        }
        LanguageModel::Gru(m) => {
            let mut params = std::mem::take(&mut m.params);
            let net = &*m;
            let r = optimize(&mut params, corpus, cfg, None, |g, store, s, _| {
                let c = g.constant(score_tensor::<T>(s));
                let loss = net.nll_with(g, store, c);
                (loss, s.num_tatums())
            });
            m.params = params;
            r
        }
        LanguageModel::Mlm(m) => {
            let mut params = std::mem::take(&mut m.params);
            let net = &*m;
            let r = optimize(
                &mut params,
                corpus,
                cfg,
                Some(&|store: &ParamStore<T>, rng: &mut ChaCha8Rng| {
                    net.recovery_with(store, corpus, rng)
                }),
                |g, store, s, rng| {
                    let c = g.constant(score_tensor::<T>(s));
                    let masked = sample_mask(s.num_tatums(), net.cfg.mask_rate, rng);
                    let loss = net.masked_nll_with(g, store, c, c, &masked, 1.0);
                    (loss, masked.len())
                },
            );
            m.params = params;
            r
        }
    }
}

type RecoveryFn<'a, T> = &'a dyn Fn(&ParamStore<T>, &mut ChaCha8Rng) -> f64;

fn optimize<T, F>(
    params: &mut ParamStore<T>,
    corpus: &[DrumScore],
    cfg: &LmTrainConfig,
    recovery: Option<RecoveryFn<'_, T>>,
    loss_fn: F,
) -> Result<LmTrainReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>, &DrumScore, &mut ChaCha8Rng) -> (Var, usize),
{
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut pieces = chunks(corpus, cfg.max_len);
    let mut report = LmTrainReport::default();
    for epoch in 0..cfg.epochs {
        pieces.shuffle(&mut rng);
        let (mut bits, mut units) = (0.0, 0usize);
        for batch in pieces.chunks(cfg.batch_size) {
            let mut acc = Vec::new();
            let mut batch_units = 0usize;
            for s in batch {
                let mut g = Graph::training(rand::Rng::random(&mut rng));
                let (loss, n) = loss_fn(&mut g, params, s, &mut rng);
                let v = g.value(loss).item().f64();
                if !v.is_finite() {
                    return Err(Error::validation(format!(
                        "non-finite language-model loss at epoch {epoch}"
                    )));
                }
                bits += v;
                units += n;
                batch_units += n;
                let grads = g.backward(loss).for_store(&g, params);
                params.apply_buffer_updates(&mut g);
                accumulate_grads(&mut acc, grads);
            }
            scale_grads(&mut acc, 1.0 / batch_units.max(1) as f64);
            if let Some(c) = cfg.clip_norm {
                clip_grad_norm(&mut acc, c);
            }
            let lr = cfg.schedule.rate(opt.steps() + 1);
            opt.step(params, &acc, lr);
        }
        report.epoch_losses.push(bits / units.max(1) as f64);
        report.steps = opt.steps();
        let mut done = false;
        if let Some(rec) = recovery {
            let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
            let r = rec(params, &mut eval_rng);
            log::info!(
                "epoch {epoch}: loss {:.4} recovery {r:.4}",
                report.epoch_losses[epoch]
            );
            report.recovery.push(r);
            done = cfg.target_recovery.is_some_and(|t| r >= t);
        } else {
            log::info!("epoch {epoch}: loss {:.4}", report.epoch_losses[epoch]);
        }
        if cfg
            .time_budget_secs
            .is_some_and(|b| clock.elapsed().as_secs_f64() >= b)
        {
            log::warn!("language-model training stopped by the time budget after epoch {epoch}");
            done = true;
        }
        if done {
            break;
        }
    }
    report.elapsed_secs = clock.elapsed().as_secs_f64();
    Ok(report)
}

/// Trains a fresh masked model on `corpus`.
pub fn mlm_train(
    corpus: &[DrumScore],
    model_cfg: MaskedLmConfig,
    train_cfg: &LmTrainConfig,
) -> Result<(MaskedLm<f32>, LmTrainReport)> {
    let mut model = LanguageModel::Mlm(MaskedLm::new(model_cfg, train_cfg.seed)?);
    let report = train_lm(&mut model, corpus, train_cfg)?;
    match model {
        LanguageModel::Mlm(m) => Ok((m, report)),
        _ => unreachable!("model kind is fixed"),
    }
}
