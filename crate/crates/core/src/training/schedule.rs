use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate as a function of the 1-based optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// `scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
    Warmup {
        scale: f64,
        d_model: usize,
        warmup: u64,
    },
}

impl LrSchedule {
    /// The warmup schedule rescaled so its peak (at `warmup`) equals
    /// `peak`.
    pub fn warmup_with_peak(peak: f64, d_model: usize, warmup: u64) -> Self {
        let raw = (d_model as f64).powf(-0.5) * (warmup as f64).powf(-0.5);
        LrSchedule::Warmup {
            scale: peak / raw,
            d_model,
            warmup,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { lr } => lr > 0.0,
            LrSchedule::Warmup {
                scale,
                d_model,
                warmup,
            } => scale > 0.0 && d_model > 0 && warmup > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "invalid learning-rate schedule {self:?}"
            )))
        }
    }

    pub fn rate(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Warmup {
                scale,
                d_model,
                warmup,
            } => lr_schedule(step, d_model, warmup, scale),
        }
    }
}

/// `scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`; step 0 is
/// treated as step 1.
pub fn lr_schedule(step: u64, d_model: usize, warmup: u64, scale: f64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    scale * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}
