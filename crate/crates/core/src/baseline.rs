//! Frame-level CNN-BiGRU baseline: the tatum-level BiGRU model without
//! tatum pooling, trained on frame targets, followed by rule-based peak
//! picking and quantization to the tatum grid.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{MelFeature, FRAME_RATE};
use crate::langmodel::score_tensor;
use crate::nn::optim::{accumulate_grads, clip_grad_norm, scale_grads};
use crate::nn::{AdamW, Graph};
use crate::score::{
    quantize_onsets, DrumScore, Instrument, OnsetEvent, OnsetProbabilities, TatumGrid,
    UndetectableReport, FAR_TOLERANCE, NUM_INSTRUMENTS,
};
use crate::training::{transcription_loss, transcription_loss_graph, TrainingPiece};
use crate::transcriber::{feature_tensor, TranscriberConfig, TranscriberModel};

/// Frame-level onset weights tuned for the Slakh setup.
pub const SLAKH_BETA_STAR: [f64; NUM_INSTRUMENTS] = [0.67, 2.00, 1.77];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakPickConfig {
    /// Threshold above the local mean.
    pub delta: f64,
    /// Interval parameters `w1..w5` in frames.
    pub w: [usize; 5],
}

impl Default for PeakPickConfig {
    fn default() -> Self {
        PeakPickConfig {
            delta: 0.2,
            w: [2, 0, 2, 0, 2],
        }
    }
}

/// Frame `t` of instrument `m` is an onset when it is the maximum of
/// `[t-w1, t+w2]`, is at least the mean of `[t-w3, t+w4]` plus `delta`,
/// and lies more than `w5` frames after the previous onset of that
/// instrument. Windows are clipped at the edges; frames are scanned left
/// to right and the rules checked in that order.
pub fn peak_pick(phi: &OnsetProbabilities, cfg: &PeakPickConfig) -> Vec<Vec<usize>> {
    let t_len = phi.num_tatums();
    let [w1, w2, w3, w4, w5] = cfg.w;
    (0..NUM_INSTRUMENTS)
        .map(|m| {
            let v: Vec<f64> = (0..t_len).map(|t| phi.get(m, t)).collect();
            let mut picked = Vec::new();
            let mut prev: Option<usize> = None;
            for t in 0..t_len {
                let x = v[t];
                let win = &v[t.saturating_sub(w1)..(t + w2 + 1).min(t_len)];
                if win.iter().any(|&u| u > x) {
                    continue;
                }
                let mw = &v[t.saturating_sub(w3)..(t + w4 + 1).min(t_len)];
                let mean = mw.iter().sum::<f64>() / mw.len() as f64;
                if x < mean + cfg.delta {
                    continue;
                }
                if prev.is_some_and(|p| t - p <= w5) {
                    continue;
                }
                picked.push(t);
                prev = Some(t);
            }
            picked
        })
        .collect()
}

/// Onset events at `frame / FRAME_RATE` seconds.
pub fn frames_to_events(frames: &[Vec<usize>]) -> Vec<OnsetEvent> {
    let mut events: Vec<OnsetEvent> = frames
        .iter()
        .zip(Instrument::ALL)
        .flat_map(|(f, inst)| {
            f.iter()
                .map(move |&t| OnsetEvent::new(inst, t as f64 / FRAME_RATE))
        })
        .collect();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    events
}

/// Quantizes picked frames onto the tatum grid.
pub fn frames_to_tatums(
    frames: &[Vec<usize>],
    grid: &TatumGrid,
) -> Result<(DrumScore, UndetectableReport)> {
    quantize_onsets(&frames_to_events(frames), grid, FAR_TOLERANCE)
}

/// Binary frame targets: each onset marks its nearest frame.
pub fn frame_targets(onsets: &[OnsetEvent], frames: usize) -> DrumScore {
    let mut y = DrumScore::new(frames);
    for e in onsets {
        let t = (e.time * FRAME_RATE).round();
        if t >= 0.0 && (t as usize) < frames {
            y.set(e.instrument.index(), t as usize, true);
        }
    }
    y
}

/// Weighted frame-level cross entropy, the same form as the tatum loss.
pub fn frame_loss(
    phi_star: &OnsetProbabilities,
    y_star: &DrumScore,
    beta_star: &[f64; NUM_INSTRUMENTS],
) -> Result<f64> {
    transcription_loss(phi_star, y_star, beta_star)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineTrainConfig {
    pub beta_star: [f64; NUM_INSTRUMENTS],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for BaselineTrainConfig {
    fn default() -> Self {
        BaselineTrainConfig {
            beta_star: SLAKH_BETA_STAR,
            epochs: 50,
            batch_size: 10,
            lr: 1e-3,
            weight_decay: 1e-4,
            clip_norm: None,
            seed: 0,
        }
    }
}

/// Frame-level model and its peak picker.
#[derive(Clone, Debug)]
pub struct FrameModel<T: crate::tensor::Scalar> {
    pub model: TranscriberModel<T>,
    pub peaks: PeakPickConfig,
}

impl<T: crate::tensor::Scalar> FrameModel<T> {
    pub fn new(cfg: TranscriberConfig, seed: u64) -> Result<Self> {
        if cfg.max_len().is_some() {
            return Err(Error::validation(
                "the frame-level baseline uses a BiGRU decoder",
            ));
        }
        Ok(FrameModel {
            model: TranscriberModel::new(cfg, seed)?,
            peaks: PeakPickConfig::default(),
        })
    }

    /// Onset probabilities per frame.
    pub fn predict_frames(&self, feature: &MelFeature) -> Result<OnsetProbabilities> {
        if feature.channels() != self.model.net.cfg.encoder.in_channels {
            return Err(Error::validation(format!(
                "model expects {} feature channels, got {}",
                self.model.net.cfg.encoder.in_channels,
                feature.channels()
            )));
        }
        let mut g = Graph::inference();
        let x = g.constant(feature_tensor(feature));
        let frames = self.model.net.encode(&mut g, &self.model.params, x);
        let out = self
            .model
            .net
            .decode(&mut g, &self.model.params, frames, None);
        let p = g.value(out.probs);
        OnsetProbabilities::from_tatum_major(p.rows(), p.data().iter().map(|v| v.f64()).collect())
    }

    /// Picked onsets and their tatum quantization.
    pub fn transcribe(
        &self,
        feature: &MelFeature,
        grid: &TatumGrid,
    ) -> Result<(Vec<OnsetEvent>, DrumScore)> {
        let frames = peak_pick(&self.predict_frames(feature)?, &self.peaks);
        let (score, _) = frames_to_tatums(&frames, grid)?;
        Ok((frames_to_events(&frames), score))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.model.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(FrameModel {
            model: TranscriberModel::load(path)?,
            peaks: PeakPickConfig::default(),
        })
    }
}

/// Mean frame loss per piece and epoch.
pub fn train_baseline(
    model: &mut FrameModel<f32>,
    pieces: &[TrainingPiece],
    cfg: &BaselineTrainConfig,
) -> Result<Vec<f64>> {
    if pieces.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::validation(
            "epochs, batch_size and lr must be positive",
        ));
    }
    let targets: Vec<_> = pieces
        .iter()
        .map(|p| score_tensor::<f32>(&frame_targets(&p.onsets, p.feature.frames())))
        .collect();
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let params = &mut model.model.params;
    let net = &model.model.net;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Vec::new();
            for &i in batch {
                let mut g = Graph::training(rng.random());
                let x = g.constant(feature_tensor(&pieces[i].feature));
                let frames = net.encode(&mut g, params, x);
                let out = net.decode(&mut g, params, frames, None);
                let t = g.constant(targets[i].clone());
                let loss = transcription_loss_graph(&mut g, out.logits, t, &cfg.beta_star);
                total += g.value(loss).item() as f64;
                let grads = g.backward(loss).for_store(&g, params);
                params.apply_buffer_updates(&mut g);
                accumulate_grads(&mut acc, grads);
            }
            scale_grads(&mut acc, 1.0 / batch.len() as f64);
            if let Some(c) = cfg.clip_norm {
                clip_grad_norm(&mut acc, c);
            }
            opt.step(params, &acc, cfg.lr);
        }
        losses.push(total / pieces.len() as f64);
    }
    Ok(losses)
}
