//! Convolutional frame encoder: mel channels in, per-frame latent vectors
//! out, time resolution untouched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::N_MELS;
use crate::nn::{BatchNorm, Conv3x3, Graph, Init, Linear, ParamStore, Var};
use crate::tensor::Scalar;

const POOL: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// 1 for music only, 2 for music + drum stem.
    pub in_channels: usize,
    /// Channels of the first and second conv block.
    pub conv_channels: [usize; 2],
    /// Latent dimension D_F.
    pub d_f: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.in_channels) {
            return Err(Error::validation("encoder takes 1 or 2 input channels"));
        }
        if self.conv_channels.contains(&0) || self.d_f == 0 {
            return Err(Error::validation("encoder dimensions must be positive"));
        }
        Ok(())
    }

    pub fn pooled_bands(&self) -> usize {
        N_MELS / POOL / POOL
    }
}

#[derive(Clone, Debug)]
struct ConvUnit {
    conv: Conv3x3,
    norm: BatchNorm,
}

impl ConvUnit {
    fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        ConvUnit {
            conv: Conv3x3::new(store, &format!("{name}.conv"), cin, cout, rng),
            norm: BatchNorm::new(store, &format!("{name}.bn"), cout),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let y = self.conv.forward(g, store, x);
        let y = self.norm.forward(g, store, y);
        g.relu(y)
    }
}

/// Two blocks of {conv, BN, ReLU, conv, BN, ReLU, frequency max-pool by 4},
/// then the frequency axis is flattened and projected to `d_f`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    units: Vec<ConvUnit>,
    proj: Linear,
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        cfg: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let [c1, c2] = cfg.conv_channels;
        let units = vec![
            ConvUnit::new(store, "encoder.unit0", cfg.in_channels, c1, rng),
            ConvUnit::new(store, "encoder.unit1", c1, c1, rng),
            ConvUnit::new(store, "encoder.unit2", c1, c2, rng),
            ConvUnit::new(store, "encoder.unit3", c2, c2, rng),
        ];
        let flat = c2 * cfg.pooled_bands();
        let proj = Linear::new(
            store,
            "encoder.proj",
            flat,
            cfg.d_f,
            Init::HeUniform { fan_in: flat },
            0.0,
            rng,
        );
        Ok(Encoder { cfg, units, proj })
    }

    /// `[channels, N_MELS, T]` to `[T, d_f]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let mut h = x;
        for (i, unit) in self.units.iter().enumerate() {
            h = unit.forward(g, store, h);
            if i % 2 == 1 {
                h = g.max_pool_freq(h, POOL);
            }
        }
        let h = g.time_major(h);
        self.proj.forward(g, store, h)
    }
}
