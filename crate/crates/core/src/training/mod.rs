//! Regularized supervised training of the transcriber: weighted
//! transcription loss, Gumbel-sigmoid relaxation, language-model
//! regularizer, learning-rate schedule, checkpoint averaging and
//! tatum-level SpecAugment.

mod augment;
mod loss;
pub mod schedule;
mod trainer;

use serde::{Deserialize, Serialize};

pub use augment::{
    average_checkpoints, average_window, mask_windows, specaugment_tatums, tatum_specaugment,
    AVERAGE_COUNT,
};
pub use loss::{
    gumbel, gumbel_sigmoid, gumbel_sigmoid_graph, total_loss, transcription_loss,
    transcription_loss_graph, GumbelNoise, LossParts, PROB_CLAMP,
};
pub use schedule::{lr_schedule, LrSchedule};
pub use trainer::{evaluate, train, Chunk, TrainOutcome, TrainReport, TrainingPiece};

use crate::error::{Error, Result};
use crate::score::NUM_INSTRUMENTS;
use crate::transcriber::TranscriberConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerMode {
    /// One random mask of `floor(rate * N)` columns per step, rescaled.
    Sampled,
    /// One pass per tatum.
    Exact,
}

impl From<RegularizerMode> for crate::langmodel::PseudoMode {
    fn from(m: RegularizerMode) -> Self {
        match m {
            RegularizerMode::Sampled => crate::langmodel::PseudoMode::Sampled,
            RegularizerMode::Exact => crate::langmodel::PseudoMode::Exact,
        }
    }
}

/// Tuned onset weights for the self-attention decoder on Slakh.
pub const SLAKH_SELFATT_BETA: [f64; NUM_INSTRUMENTS] = [0.62, 0.92, 0.90];
/// Tuned onset weights for the BiGRU decoder on Slakh.
pub const SLAKH_BIGRU_BETA: [f64; NUM_INSTRUMENTS] = [1.07, 0.19, 0.40];

/// Tuned regularizer weight on Slakh for a decoder and language model.
pub fn slakh_gamma(selfatt: bool, lm: crate::langmodel::LmKind) -> f64 {
    use crate::langmodel::LmKind::*;
    match (selfatt, lm) {
        (true, Bigram) => 1.02,
        (true, Gru) => 0.07,
        (true, Mlm) => 1.25,
        (false, Bigram) => 0.10,
        (false, Gru) => 0.05,
        (false, Mlm) => 0.01,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Onset weights per instrument.
    pub beta: [f64; NUM_INSTRUMENTS],
    /// Regularizer weight; zero disables the language model.
    pub gamma: f64,
    /// Gumbel-sigmoid temperature.
    pub tau: f64,
    pub batch_size: usize,
    /// Tatums per training chunk for self-attention models.
    pub max_len: usize,
    /// Peak learning rate of the warmup schedule, or the flat rate of
    /// recurrent models.
    pub lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub epochs: usize,
    pub specaugment: bool,
    pub specaugment_rate: f64,
    /// Inference threshold on onset probabilities.
    pub threshold: f64,
    /// Frames of context kept on both sides of a chunk.
    pub context_frames: usize,
    pub regularizer_mode: RegularizerMode,
    /// Average checkpoints around the best validation epoch.
    pub average: bool,
    pub seed: u64,
    /// Wall-clock limit in seconds, checked between epochs.
    pub time_budget_secs: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            beta: [1.0; NUM_INSTRUMENTS],
            gamma: 0.0,
            tau: 0.2,
            batch_size: 10,
            max_len: 256,
            lr: 1e-3,
            warmup_steps: 4000,
            weight_decay: 1e-4,
            clip_norm: None,
            epochs: 100,
            specaugment: false,
            specaugment_rate: 0.15,
            threshold: 0.2,
            context_frames: 8,
            regularizer_mode: RegularizerMode::Sampled,
            average: true,
            seed: 0,
            time_budget_secs: None,
        }
    }
}

impl TrainingConfig {
    /// Defaults with the Slakh weights for the given decoder and
    /// optional regularizing language model.
    pub fn slakh(selfatt: bool, lm: Option<crate::langmodel::LmKind>) -> Self {
        TrainingConfig {
            beta: if selfatt {
                SLAKH_SELFATT_BETA
            } else {
                SLAKH_BIGRU_BETA
            },
            gamma: lm.map_or(0.0, |k| slakh_gamma(selfatt, k)),
            ..TrainingConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::validation("onset weights beta must be positive"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::validation("gamma must be non-negative"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::validation("tau must be positive"));
        }
        if self.batch_size == 0 || self.max_len == 0 || self.epochs == 0 {
            return Err(Error::validation(
                "batch_size, max_len and epochs must be positive",
            ));
        }
        if !(self.lr > 0.0) || self.warmup_steps == 0 {
            return Err(Error::validation(
                "learning rate and warmup must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.specaugment_rate) {
            return Err(Error::validation("specaugment_rate must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::validation("threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Warmup schedule for self-attention decoders, flat rate otherwise.
    pub fn schedule(&self, model: &TranscriberConfig) -> LrSchedule {
        if model.max_len().is_some() {
            LrSchedule::warmup_with_peak(self.lr, model.encoder.d_f, self.warmup_steps)
        } else {
            LrSchedule::Constant { lr: self.lr }
        }
    }
}
