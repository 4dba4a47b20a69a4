//! Experiment configuration: dataset locations, model and language-model
//! choice, training hyperparameters and the seed. Read from JSON or TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langmodel::{LmConfig, LmKind, LmTrainConfig, MaskedLmConfig, RecurrentLmConfig};
use crate::posenc::EncodingKind;
use crate::synth::SyntheticSpec;
use crate::training::TrainingConfig;
use crate::transcriber::TranscriberConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Bigru,
    Selfatt,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bigru" => Ok(ModelKind::Bigru),
            "selfatt" => Ok(ModelKind::Selfatt),
            other => Err(Error::validation(format!("unknown model {other:?}"))),
        }
    }
}

/// Language model used as a regularizer, or none.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmChoice {
    #[default]
    None,
    Bigram,
    Gru,
    Mlm,
}

impl LmChoice {
    pub fn kind(self) -> Option<LmKind> {
        match self {
            LmChoice::None => None,
            LmChoice::Bigram => Some(LmKind::Bigram),
            LmChoice::Gru => Some(LmKind::Gru),
            LmChoice::Mlm => Some(LmKind::Mlm),
        }
    }
}

impl std::str::FromStr for LmChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(LmChoice::None);
        }
        Ok(match s.parse::<LmKind>()? {
            LmKind::Bigram => LmChoice::Bigram,
            LmKind::Gru => LmChoice::Gru,
            LmKind::Mlm => LmChoice::Mlm,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetPaths {
    /// Directory of training pieces.
    pub train: Option<PathBuf>,
    /// Directory of validation pieces used for best-epoch selection.
    pub validation: Option<PathBuf>,
    /// Directory of test pieces for `transcribe` and `evaluate`.
    pub test: Option<PathBuf>,
    /// Directory of score JSON files for language-model pretraining.
    pub lm_corpus: Option<PathBuf>,
    /// Alternative tatum files (for example from a beat tracker), looked
    /// up by piece name instead of the dataset's own `*.tatums.txt`.
    pub tatums: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DatasetPaths,
    pub model: ModelKind,
    pub encoding: EncodingKind,
    /// Explicit architecture; when set, `model`, `encoding` and
    /// `separated_drums` only affect data loading.
    pub architecture: Option<TranscriberConfig>,
    /// Stack a separated drum track (`<name>.drums.wav`) as a second
    /// feature channel.
    pub separated_drums: bool,
    pub lm: LmChoice,
    /// Pretrained language model checkpoint used by `train`.
    pub lm_checkpoint: Option<PathBuf>,
    pub mlm: MaskedLmConfig,
    pub gru: RecurrentLmConfig,
    pub lm_training: LmTrainConfig,
    pub training: TrainingConfig,
    pub synth: SyntheticSpec,
    /// Extra synthetic pieces written to a separate held-out directory.
    pub synth_held_out: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DatasetPaths::default(),
            model: ModelKind::Selfatt,
            encoding: EncodingKind::Sync,
            architecture: None,
            separated_drums: false,
            lm: LmChoice::None,
            lm_checkpoint: None,
            mlm: MaskedLmConfig::default(),
            gru: RecurrentLmConfig::default(),
            lm_training: LmTrainConfig::default(),
            training: TrainingConfig::default(),
            synth: SyntheticSpec::default(),
            synth_held_out: 10,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML for `.toml` files and JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.lm_training.validate()?;
        self.synth.validate()?;
        self.transcriber().validate()?;
        if self.transcriber().encoder.in_channels != self.in_channels() {
            return Err(Error::validation(
                "architecture in_channels does not match separated_drums",
            ));
        }
        if self.training.gamma > 0.0 && self.lm == LmChoice::None {
            return Err(Error::validation("gamma > 0 needs a language model (lm)"));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        if self.separated_drums {
            2
        } else {
            1
        }
    }

    pub fn transcriber(&self) -> TranscriberConfig {
        if let Some(cfg) = self.architecture {
            return cfg;
        }
        let mut cfg = match self.model {
            ModelKind::Selfatt => TranscriberConfig::selfatt(self.in_channels(), self.encoding),
            ModelKind::Bigru => TranscriberConfig::bigru(self.in_channels()),
        };
        if let crate::transcriber::DecoderConfig::SelfAtt(ref mut sa) = cfg.decoder {
            sa.max_len = self.training.max_len;
        }
        cfg
    }

    /// Configuration of the language model named by `lm`, if any.
    pub fn lm_config(&self) -> Option<LmConfig> {
        Some(match self.lm.kind()? {
            LmKind::Bigram => LmConfig::Bigram(crate::langmodel::BigramParams {
                pi01: 0.5,
                pi11: 0.5,
            }),
            LmKind::Gru => LmConfig::Gru(self.gru),
            LmKind::Mlm => LmConfig::Mlm(self.mlm),
        })
    }
}

/// Fails with a validation error naming `what` and the path when `path`
/// does not exist.
pub fn require_path(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}
