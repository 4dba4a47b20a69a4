//! Frame-to-tatum transcription: convolutional frame encoder, tatum max
//! pooling, and a self-attention or BiGRU decoder emitting onset
//! probabilities per tatum.

mod encoder;
pub mod pooling;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use encoder::{Encoder, EncoderConfig};
pub use pooling::{tatum_windows, Window};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::features::{MelFeature, FRAME_RATE, N_MELS};
use crate::nn::attention::collect_maps;
use crate::nn::{
    AttentionConfig, AttentionMaps, AttentionStack, Graph, Gru, Init, Linear, ParamStore, Var,
};
use crate::posenc::{EncodingKind, PositionalEncoding};
use crate::score::{OnsetProbabilities, TatumGrid, NUM_INSTRUMENTS};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfAttConfig {
    pub heads: usize,
    pub layers: usize,
    pub d_ffn: usize,
    pub dropout: f64,
    pub encoding: EncodingKind,
    /// Longest tatum sequence used in training; longer inputs are split.
    pub max_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiGruConfig {
    pub layers: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecoderConfig {
    SelfAtt(SelfAttConfig),
    BiGru(BiGruConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriberConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// Expected fraction of active cells; the output bias starts at its
    /// logit.
    pub onset_rate: f64,
}

impl TranscriberConfig {
    /// Self-attention decoder with two heads, eight layers, D_F = 96.
    pub fn selfatt(in_channels: usize, encoding: EncodingKind) -> Self {
        TranscriberConfig {
            encoder: EncoderConfig {
                in_channels,
                conv_channels: [32, 64],
                d_f: 96,
            },
            decoder: DecoderConfig::SelfAtt(SelfAttConfig {
                heads: 2,
                layers: 8,
                d_ffn: 384,
                dropout: 0.1,
                encoding,
                max_len: 256,
            }),
            onset_rate: 0.2,
        }
    }

    /// One-layer BiGRU decoder with 131 hidden units per direction.
    pub fn bigru(in_channels: usize) -> Self {
        TranscriberConfig {
            encoder: EncoderConfig {
                in_channels,
                conv_channels: [32, 64],
                d_f: 96,
            },
            decoder: DecoderConfig::BiGru(BiGruConfig {
                layers: 1,
                hidden: 131,
            }),
            onset_rate: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if !(self.onset_rate > 0.0 && self.onset_rate < 1.0) {
            return Err(Error::validation("onset_rate must lie in (0, 1)"));
        }
        match self.decoder {
            DecoderConfig::SelfAtt(c) => {
                self.attention(&c).validate()?;
                if c.max_len == 0 {
                    return Err(Error::validation("max_len must be positive"));
                }
            }
            DecoderConfig::BiGru(c) => {
                if c.layers == 0 || c.hidden == 0 {
                    return Err(Error::validation("BiGRU dimensions must be positive"));
                }
            }
        }
        Ok(())
    }

    fn attention(&self, c: &SelfAttConfig) -> AttentionConfig {
        AttentionConfig {
            heads: c.heads,
            layers: c.layers,
            d_model: self.encoder.d_f,
            d_ffn: c.d_ffn,
            dropout: c.dropout,
        }
    }

    pub fn max_len(&self) -> Option<usize> {
        match self.decoder {
            DecoderConfig::SelfAtt(c) => Some(c.max_len),
            DecoderConfig::BiGru(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
enum Decoder {
    SelfAtt {
        cfg: SelfAttConfig,
        stack: AttentionStack,
    },
    BiGru {
        layers: Vec<(Gru, Gru)>,
    },
}

/// Layer structure of a transcription model; parameters live in a
/// separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Transcriber {
    pub cfg: TranscriberConfig,
    encoder: Encoder,
    decoder: Decoder,
    head: Linear,
}

/// Output of one forward pass.
pub struct TranscriberOutput {
    /// `[N, M]` logits of the onset probabilities.
    pub logits: Var,
    /// `[N, M]` sigmoid of the logits.
    pub probs: Var,
    /// Per layer and head attention matrices (self-attention only).
    pub attention: Vec<Vec<Var>>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Transcriber {
    pub fn new<T: Scalar>(
        cfg: TranscriberConfig,
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(store, cfg.encoder, &mut rng)?;
        let d_f = cfg.encoder.d_f;
        let (decoder, head_in) = match cfg.decoder {
            DecoderConfig::SelfAtt(c) => {
                let stack = AttentionStack::new(store, "decoder", cfg.attention(&c), &mut rng)?;
                (Decoder::SelfAtt { cfg: c, stack }, d_f)
            }
            DecoderConfig::BiGru(c) => {
                let layers = (0..c.layers)
                    .map(|l| {
                        let input = if l == 0 { d_f } else { 2 * c.hidden };
                        (
                            Gru::new(
                                store,
                                &format!("decoder.gru{l}.fwd"),
                                input,
                                c.hidden,
                                &mut rng,
                            ),
                            Gru::new(
                                store,
                                &format!("decoder.gru{l}.bwd"),
                                input,
                                c.hidden,
                                &mut rng,
                            ),
                        )
                    })
                    .collect();
                (Decoder::BiGru { layers }, 2 * c.hidden)
            }
        };
        // U(0,1) weights as in the reference setup, scaled by the fan-in so
        // that initial logits stay O(1); bias at the onset-rate logit
        let bound = 1.0 / (head_in as f64).sqrt();
        let head = Linear::new(
            store,
            "head",
            head_in,
            NUM_INSTRUMENTS,
            Init::Uniform {
                low: 0.0,
                high: bound,
            },
            logit(cfg.onset_rate),
            &mut rng,
        );
        Ok(Transcriber {
            cfg,
            encoder,
            decoder,
            head,
        })
    }

    /// Frame-level latent features `[T, D_F]` for `[C, N_MELS, T]` input.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        self.encoder.forward(g, store, x)
    }

    /// Decodes tatum-level features `[N, D_F]`. `encoding` overrides the
    /// configured positional encoding when given.
    pub fn decode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        tatum_feats: Var,
        encoding: Option<EncodingKind>,
    ) -> TranscriberOutput {
        let n = g.shape(tatum_feats)[0];
        let (hidden, attention) = match &self.decoder {
            Decoder::SelfAtt { cfg, stack } => {
                let kind = encoding.unwrap_or(cfg.encoding);
                let z = if kind == EncodingKind::None {
                    tatum_feats
                } else {
                    let pe = PositionalEncoding::new(kind, self.cfg.encoder.d_f, n)
                        .expect("validated dimensions")
                        .tatum_major::<T>();
                    let e = g.constant(pe);
                    g.add(tatum_feats, e)
                };
                stack.forward(g, store, z)
            }
            Decoder::BiGru { layers } => {
                let mut h = tatum_feats;
                for (fwd, bwd) in layers {
                    let a = fwd.forward(g, store, h, false);
                    let b = bwd.forward(g, store, h, true);
                    h = g.concat_cols(&[a, b]);
                }
                (h, Vec::new())
            }
        };
        let logits = self.head.forward(g, store, hidden);
        let probs = g.sigmoid(logits);
        TranscriberOutput {
            logits,
            probs,
            attention,
        }
    }

    /// Full forward pass with precomputed pooling windows.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        windows: &[Window],
    ) -> TranscriberOutput {
        let frames = self.encode(g, store, x);
        let tatums = g.segment_max_rows(frames, windows);
        self.decode(g, store, tatums, None)
    }

    pub fn is_selfatt(&self) -> bool {
        matches!(self.decoder, Decoder::SelfAtt { .. })
    }
}

/// Model structure and parameters together.
#[derive(Clone, Debug)]
pub struct TranscriberModel<T: Scalar> {
    pub net: Transcriber,
    pub params: ParamStore<T>,
}

/// Pooling windows for a feature and a tatum grid.
pub fn windows_for(feature: &MelFeature, grid: &TatumGrid) -> Result<Vec<Window>> {
    let b = grid.frame_indices(FRAME_RATE, feature.frames())?;
    tatum_windows(&b, feature.frames())
}

pub fn feature_tensor<T: Scalar>(feature: &MelFeature) -> Tensor<T> {
    Tensor::from_vec(
        &[feature.channels(), N_MELS, feature.frames()],
        feature.values().iter().map(|&v| T::of(v as f64)).collect(),
    )
}

impl<T: Scalar> TranscriberModel<T> {
    pub fn new(cfg: TranscriberConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = Transcriber::new(cfg, &mut params, seed)?;
        Ok(TranscriberModel { net, params })
    }

    pub fn config(&self) -> &TranscriberConfig {
        &self.net.cfg
    }

    fn check_input(&self, feature: &MelFeature) -> Result<()> {
        if feature.channels() != self.net.cfg.encoder.in_channels {
            return Err(Error::validation(format!(
                "model expects {} feature channels, got {}",
                self.net.cfg.encoder.in_channels,
                feature.channels()
            )));
        }
        Ok(())
    }

    fn run(&self, feature: &MelFeature, grid: &TatumGrid) -> Result<(Graph<T>, TranscriberOutput)> {
        self.check_input(feature)?;
        let windows = windows_for(feature, grid)?;
        if let Some(max) = self.net.cfg.max_len().filter(|&m| windows.len() > m) {
            log::warn!(
                "decoding {} tatums in one pass; training used at most {max}",
                windows.len()
            );
        }
        let mut g = Graph::inference();
        let x = g.constant(feature_tensor(feature));
        let out = self.net.forward(&mut g, &self.params, x, &windows);
        Ok((g, out))
    }

    /// Onset probabilities for every tatum of `grid`.
    pub fn predict(&self, feature: &MelFeature, grid: &TatumGrid) -> Result<OnsetProbabilities> {
        let (g, out) = self.run(feature, grid)?;
        let probs = g.value(out.probs);
        let n = probs.rows();
        OnsetProbabilities::from_tatum_major(
            n,
            probs
                .data()
                .iter()
                .map(|v| v.f64().clamp(0.0, 1.0))
                .collect(),
        )
    }

    /// Attention matrices `[layer][head]`, each `N x N`.
    pub fn attention_maps(
        &self,
        feature: &MelFeature,
        grid: &TatumGrid,
    ) -> Result<AttentionMaps<T>> {
        if !self.net.is_selfatt() {
            return Err(Error::validation(
                "attention maps need a self-attention decoder",
            ));
        }
        let (g, out) = self.run(feature, grid)?;
        Ok(collect_maps(&g, &out.attention))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params, &self.net.cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: TranscriberConfig = checkpoint::load_config(path)?;
        let mut model = Self::new(cfg, 0)?;
        checkpoint::load_params(path, &mut model.params)?;
        Ok(model)
    }
}
