use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::augment::{average_checkpoints_map, mask_windows, specaugment_tatums};
use super::loss::{total_loss, transcription_loss, GumbelNoise};
use super::TrainingConfig;
use crate::error::{Error, Result};
use crate::features::MelFeature;
use crate::langmodel::{score_tensor, LanguageModel};
use crate::metrics::{corpus_metrics, MetricsReport, PieceEval, TOLERANCE};
use crate::nn::optim::{accumulate_grads, clip_grad_norm, scale_grads};
use crate::nn::{AdamW, Graph, ParamStore};
use crate::score::{binarize, DrumScore, OnsetEvent, TatumGrid};
use crate::transcriber::{feature_tensor, windows_for, TranscriberModel, Window};

/// One annotated piece.
#[derive(Clone, Debug)]
pub struct TrainingPiece {
    pub name: String,
    pub feature: MelFeature,
    pub grid: TatumGrid,
    pub score: DrumScore,
    /// Reference onsets for evaluation; the score rendered on the grid
    /// when no finer annotation exists.
    pub onsets: Vec<OnsetEvent>,
}

/// A training excerpt: a tatum range, its frames with context, and
/// pooling windows relative to the crop.
#[derive(Clone, Debug)]
pub struct Chunk {
    pub feature: MelFeature,
    pub windows: Vec<Window>,
    pub score: DrumScore,
}

impl Chunk {
    /// Splits a piece into non-overlapping runs of at most `max_len`
    /// tatums, each cropped to its frames plus `context` frames per side.
    pub fn split(
        piece: &TrainingPiece,
        max_len: Option<usize>,
        context: usize,
    ) -> Result<Vec<Chunk>> {
        let windows = windows_for(&piece.feature, &piece.grid)?;
        if piece.score.num_tatums() != windows.len() {
            return Err(Error::validation(format!(
                "piece {} has {} tatums in its grid and {} in its score",
                piece.name,
                windows.len(),
                piece.score.num_tatums()
            )));
        }
        let n = windows.len();
        let len = max_len.unwrap_or(n).max(1);
        let mut out = Vec::new();
        let mut start = 0;
        while start < n {
            let take = len.min(n - start);
            let ws = &windows[start..start + take];
            let a = ws[0].0.saturating_sub(context);
            let z = (ws[take - 1].1 + context).min(piece.feature.frames());
            out.push(Chunk {
                feature: piece.feature.crop(a, z - a),
                windows: ws.iter().map(|&(s, e)| (s - a, e - a)).collect(),
                score: piece.score.slice(start, take),
            });
            start += take;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub epochs: usize,
    /// Mean total loss per chunk, per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean language-model cost in bits per chunk, per epoch.
    pub epoch_language: Vec<f64>,
    /// Validation F-measure (percent) per epoch when a validation set is
    /// given.
    pub validation_f: Vec<f64>,
    pub best_epoch: usize,
    /// Epochs averaged into the returned parameters.
    pub averaged: Vec<usize>,
    pub elapsed_secs: f64,
}

pub struct TrainOutcome {
    pub model: TranscriberModel<f32>,
    pub report: TrainReport,
}

/// Retained parameter snapshots: the last `AVERAGE_COUNT` epochs and the
/// averaging window of the current best.
struct History {
    snapshots: BTreeMap<usize, ParamStore<f32>>,
}

impl History {
    fn push(&mut self, epoch: usize, params: &ParamStore<f32>, best: usize) {
        self.snapshots.insert(epoch, params.clone());
        let k = super::AVERAGE_COUNT;
        let recent = (epoch + 1).saturating_sub(k);
        let lo = best.saturating_sub(k / 2);
        let hi = lo + k;
        self.snapshots
            .retain(|&e, _| e >= recent || (lo..hi).contains(&e));
    }
}

fn write_line(log: &mut Option<&mut dyn Write>, value: serde_json::Value) -> Result<()> {
    if let Some(w) = log.as_mut() {
        writeln!(w, "{value}").map_err(|e| Error::io("metrics log", e))?;
    }
    Ok(())
}

/// Trains `model` on `train`, selecting the best epoch on `validation`
/// (or on the training loss when it is empty). A language model, when
/// given, is frozen for the whole run; its parameters are checked to be
/// bitwise unchanged at the end. Each step and each epoch append one JSON
/// line to `log`.
pub fn train(
    mut model: TranscriberModel<f32>,
    train: &[TrainingPiece],
    validation: &[TrainingPiece],
    lm: Option<&LanguageModel<f32>>,
    cfg: &TrainingConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    if cfg.gamma > 0.0 && lm.is_none() {
        return Err(Error::validation("a positive gamma needs a language model"));
    }
    let clock = Instant::now();
    let lm = lm.map(|m| {
        let mut m = m.clone();
        m.freeze();
        m
    });
    let lm_before = lm.as_ref().and_then(|m| m.params().cloned());
    let max_len = model.net.cfg.max_len().map(|_| cfg.max_len);
    let mut chunks = Vec::new();
    for p in train {
        chunks.extend(Chunk::split(p, max_len, cfg.context_frames)?);
    }
    let schedule = cfg.schedule(&model.net.cfg);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let mut history = History {
        snapshots: BTreeMap::new(),
    };
    // (validation F, -validation loss), compared lexicographically
    let mut best_score = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mode = cfg.regularizer_mode.into();

    for epoch in 0..cfg.epochs {
        chunks.shuffle(&mut rng);
        let (mut loss_sum, mut lang_sum) = (0.0, 0.0);
        for batch in chunks.chunks(cfg.batch_size) {
            let mut acc = Vec::new();
            let (mut b_loss, mut b_tran, mut b_lang) = (0.0, 0.0, 0.0);
            for chunk in batch {
                let mut feature = chunk.feature.clone();
                if cfg.specaugment {
                    let picked =
                        specaugment_tatums(chunk.windows.len(), cfg.specaugment_rate, &mut rng);
                    mask_windows(&mut feature, &chunk.windows, &picked);
                }
                let mut g = Graph::training(rng.random());
                let x = g.constant(feature_tensor(&feature));
                let out = model.net.forward(&mut g, &model.params, x, &chunk.windows);
                let target = g.constant(score_tensor(&chunk.score));
                let noise = if cfg.gamma > 0.0 {
                    GumbelNoise::sample(chunk.score.num_tatums(), &mut rng)
                } else {
                    GumbelNoise::paired(0)
                };
                let parts = total_loss(
                    &mut g,
                    out.logits,
                    out.probs,
                    target,
                    &cfg.beta,
                    cfg.gamma,
                    cfg.tau,
                    lm.as_ref(),
                    &noise,
                    mode,
                    &mut rng,
                )?;
                let total = g.value(parts.total).item() as f64;
                if !total.is_finite() {
                    return Err(Error::validation(format!(
                        "non-finite training loss at epoch {epoch}"
                    )));
                }
                b_loss += total;
                b_tran += g.value(parts.transcription).item() as f64;
                b_lang += parts.language.map_or(0.0, |v| g.value(v).item() as f64);
                let grads = g.backward(parts.total).for_store(&g, &model.params);
                model.params.apply_buffer_updates(&mut g);
                accumulate_grads(&mut acc, grads);
            }
            let k = batch.len() as f64;
            scale_grads(&mut acc, 1.0 / k);
            if let Some(c) = cfg.clip_norm {
                clip_grad_norm(&mut acc, c);
            }
            let lr = schedule.rate(opt.steps() + 1);
            opt.step(&mut model.params, &acc, lr);
            loss_sum += b_loss;
            lang_sum += b_lang;
            write_line(
                &mut log,
                json!({
                    "kind": "step",
                    "epoch": epoch,
                    "step": opt.steps(),
                    "loss": b_loss / k,
                    "transcription": b_tran / k,
                    "language": b_lang / k,
                    "lr": lr,
                }),
            )?;
        }
        let n = chunks.len() as f64;
        report.epoch_losses.push(loss_sum / n);
        report.epoch_language.push(lang_sum / n);
        let (score, val) = if validation.is_empty() {
            ((-loss_sum / n, 0.0), None)
        } else {
            let (m, loss) = evaluate_with_loss(&model, validation, cfg)?;
            let f = m.total.prf.f_measure;
            report.validation_f.push(f);
            ((f, -loss), Some((f, loss)))
        };
        if score > best_score {
            best_score = score;
            report.best_epoch = epoch;
        }
        history.push(epoch, &model.params, report.best_epoch);
        write_line(
            &mut log,
            json!({
                "kind": "epoch",
                "epoch": epoch,
                "train_loss": loss_sum / n,
                "language": lang_sum / n,
                "validation_f": val.map(|v| v.0),
                "validation_loss": val.map(|v| v.1),
                "best_epoch": report.best_epoch,
            }),
        )?;
        log::info!("epoch {epoch}: loss {:.4}", loss_sum / n);
        report.epochs = epoch + 1;
        if cfg
            .time_budget_secs
            .is_some_and(|b| clock.elapsed().as_secs_f64() >= b)
        {
            log::warn!("training stopped by the time budget after epoch {epoch}");
            break;
        }
    }
    report.steps = opt.steps();

    if cfg.average {
        let (params, used) =
            average_checkpoints_map(&history.snapshots, report.epochs, report.best_epoch)?;
        model.params.load_from(&params)?;
        report.averaged = used;
    } else {
        report.averaged = vec![report.epochs - 1];
    }
    if let (Some(before), Some(after)) = (&lm_before, lm.as_ref().and_then(|m| m.params())) {
        if !before.bitwise_eq(after) {
            return Err(Error::validation(
                "language-model parameters changed during training",
            ));
        }
    }
    report.elapsed_secs = clock.elapsed().as_secs_f64();
    Ok(TrainOutcome { model, report })
}

fn evaluate_with_loss(
    model: &TranscriberModel<f32>,
    pieces: &[TrainingPiece],
    cfg: &TrainingConfig,
) -> Result<(MetricsReport, f64)> {
    let mut evals = Vec::with_capacity(pieces.len());
    let mut loss = 0.0;
    for p in pieces {
        let phi = model.predict(&p.feature, &p.grid)?;
        loss += transcription_loss(&phi, &p.score, &cfg.beta)?;
        evals.push(piece_eval(p, &phi, cfg.threshold)?);
    }
    Ok((
        corpus_metrics(&evals, TOLERANCE)?,
        loss / pieces.len() as f64,
    ))
}

fn piece_eval(
    p: &TrainingPiece,
    phi: &crate::score::OnsetProbabilities,
    threshold: f64,
) -> Result<PieceEval> {
    let est = binarize(phi, threshold)?;
    Ok(PieceEval {
        name: p.name.clone(),
        est_onsets: est.render_onsets(&p.grid)?,
        gt_onsets: p.onsets.clone(),
        est_score: est,
        gt_score: p.score.clone(),
    })
}

/// Tatum-level evaluation: binarize at `threshold`, render on the grid
/// and compare with the reference onsets.
pub fn evaluate<T: crate::tensor::Scalar>(
    model: &TranscriberModel<T>,
    pieces: &[TrainingPiece],
    threshold: f64,
) -> Result<MetricsReport> {
    let evals = pieces
        .iter()
        .map(|p| piece_eval(p, &model.predict(&p.feature, &p.grid)?, threshold))
        .collect::<Result<Vec<_>>>()?;
    corpus_metrics(&evals, TOLERANCE)
}
