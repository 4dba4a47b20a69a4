use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{DrumScore, NUM_INSTRUMENTS};

/// Distance in tatums between a cell and the cell it is conditioned on
/// (one 4/4 bar of sixteenth notes).
pub const LAG: usize = 16;

pub(crate) const PROB_FLOOR: f64 = 1e-12;

/// Repetition-aware bi-gram over each instrument's activations, shared by
/// all instruments. `pi01` is `P(1 | 0 one bar earlier)` and `pi11` is
/// `P(1 | 1 one bar earlier)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BigramParams {
    pub pi01: f64,
    pub pi11: f64,
}

impl BigramParams {
    pub fn new(pi01: f64, pi11: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&pi01) || !(0.0..=1.0).contains(&pi11) {
            return Err(Error::validation(
                "bi-gram probabilities must lie in [0, 1]",
            ));
        }
        Ok(BigramParams { pi01, pi11 })
    }

    pub fn uniform() -> Self {
        BigramParams {
            pi01: 0.5,
            pi11: 0.5,
        }
    }

    /// Probability of an onset given the activation one bar earlier,
    /// kept strictly inside (0, 1) so every score has finite cost.
    pub fn p_on(&self, previous: bool) -> f64 {
        let p = if previous { self.pi11 } else { self.pi01 };
        p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }
}

/// Transition counts `[from][to]` over all cells with a full bar of
/// history.
pub fn transition_counts(corpus: &[DrumScore]) -> [[u64; 2]; 2] {
    let mut c = [[0u64; 2]; 2];
    for s in corpus {
        for m in 0..NUM_INSTRUMENTS {
            for n in LAG..s.num_tatums() {
                c[s.get(m, n - LAG) as usize][s.get(m, n) as usize] += 1;
            }
        }
    }
    c
}

/// Maximum-likelihood fit with add-one smoothing. Falls back to the
/// uniform model when no piece is longer than one bar.
pub fn bigram_fit(corpus: &[DrumScore]) -> Result<BigramParams> {
    if corpus.is_empty() {
        return Err(Error::validation("cannot fit a bi-gram on an empty corpus"));
    }
    let c = transition_counts(corpus);
    if c.iter().flatten().sum::<u64>() == 0 {
        log::warn!("no piece exceeds {LAG} tatums; using the uniform bi-gram");
        return Ok(BigramParams::uniform());
    }
    let smooth = |row: [u64; 2]| (row[1] as f64 + 1.0) / ((row[0] + row[1]) as f64 + 2.0);
    Ok(BigramParams {
        pi01: smooth(c[0]),
        pi11: smooth(c[1]),
    })
}

/// Bits for instrument `m` of `score`; the first bar conditions on silence.
pub fn instrument_nll(params: &BigramParams, score: &DrumScore, m: usize) -> Vec<f64> {
    (0..score.num_tatums())
        .map(|n| {
            let prev = n >= LAG && score.get(m, n - LAG);
            let p = params.p_on(prev);
            let q = if score.get(m, n) { p } else { 1.0 - p };
            -q.log2()
        })
        .collect()
}
