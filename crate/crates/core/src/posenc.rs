//! Trigonometric positional encodings: the standard transformer encoding
//! and the tatum-synchronous variant whose period grows linearly with the
//! dimension index.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    /// No positional information (useful for ablations and tests).
    None,
    Standard,
    Sync,
}

impl std::str::FromStr for EncodingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(EncodingKind::None),
            "standard" => Ok(EncodingKind::Standard),
            "sync" => Ok(EncodingKind::Sync),
            other => Err(Error::validation(format!(
                "unknown encoding kind {other:?}"
            ))),
        }
    }
}

/// A `d_f x n` encoding matrix stored row-major by dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncoding {
    pub kind: EncodingKind,
    d_f: usize,
    n: usize,
    values: Vec<f64>,
}

impl PositionalEncoding {
    pub fn new(kind: EncodingKind, d_f: usize, n: usize) -> Result<Self> {
        match kind {
            EncodingKind::Standard => standard_pe(d_f, n),
            EncodingKind::Sync => sync_pe(d_f, n),
            EncodingKind::None => {
                check_dims(d_f, n)?;
                Ok(PositionalEncoding {
                    kind,
                    d_f,
                    n,
                    values: vec![0.0; d_f * n],
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.d_f
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Entry at dimension `d`, tatum `n` (0-based).
    pub fn get(&self, d: usize, n: usize) -> f64 {
        self.values[d * self.n + n]
    }

    /// Tatum-major `[n, d_f]` tensor, the layout added to latent features.
    pub fn tatum_major<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.n, self.d_f], |i| {
            T::of(self.get(i % self.d_f, i / self.d_f))
        })
    }
}

fn check_dims(d_f: usize, n: usize) -> Result<()> {
    if d_f < 2 || n < 1 {
        return Err(Error::validation(format!(
            "positional encoding needs d_f >= 2 and n >= 1, got {d_f} x {n}"
        )));
    }
    Ok(())
}

fn build(
    kind: EncodingKind,
    d_f: usize,
    n: usize,
    angle: impl Fn(usize, usize) -> f64,
) -> Result<PositionalEncoding> {
    check_dims(d_f, n)?;
    let mut values = Vec::with_capacity(d_f * n);
    for d in 0..d_f {
        for t in 0..n {
            let a = angle(d, t);
            values.push(if d % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Ok(PositionalEncoding {
        kind,
        d_f,
        n,
        values,
    })
}

/// `sin(n / 10000^(2k/D))` on row `2k`, `cos` of the same angle on row
/// `2k + 1`, so each row pair shares one frequency.
pub fn standard_pe(d_f: usize, n: usize) -> Result<PositionalEncoding> {
    build(EncodingKind::Standard, d_f, n, |d, t| {
        t as f64 / 10000f64.powf(2.0 * (d / 2) as f64 / d_f as f64)
    })
}

/// `sin(pi n / (2 + floor(d/2)))` on even rows, `cos` on odd rows: row pair
/// `k` repeats every `2(2 + k)` tatums. The phase index is reduced modulo
/// that period first, so repetition is exact in floating point.
pub fn sync_pe(d_f: usize, n: usize) -> Result<PositionalEncoding> {
    build(EncodingKind::Sync, d_f, n, |d, t| {
        let q = 2 + d / 2;
        PI * (t % (2 * q)) as f64 / q as f64
    })
}
