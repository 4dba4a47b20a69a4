use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::MelFeature;
use crate::nn::ParamStore;
use crate::score::TatumGrid;
use crate::tensor::Scalar;
use crate::transcriber::{windows_for, Window};

/// Number of checkpoints averaged around the best epoch.
pub const AVERAGE_COUNT: usize = 10;

/// Epoch indices averaged for `best`: five before, the best and four
/// after, shifted to stay inside `[0, len)`.
pub fn average_window(len: usize, best: usize) -> Range<usize> {
    let size = AVERAGE_COUNT.min(len);
    let start = best.saturating_sub(AVERAGE_COUNT / 2).min(len - size);
    start..start + size
}

/// Arithmetic mean of the checkpoints around `best`.
pub fn average_checkpoints<T: Scalar>(
    history: &[ParamStore<T>],
    best: usize,
) -> Result<ParamStore<T>> {
    if best >= history.len() {
        return Err(Error::validation(format!(
            "best epoch {best} outside a history of {}",
            history.len()
        )));
    }
    let picked: Vec<&ParamStore<T>> = history[average_window(history.len(), best)]
        .iter()
        .collect();
    ParamStore::average(&picked)
}

/// Averages the window around `best` from sparse snapshots keyed by
/// epoch, for a run of `len` epochs. Returns the epochs used.
pub(crate) fn average_checkpoints_map<T: Scalar>(
    snapshots: &BTreeMap<usize, ParamStore<T>>,
    len: usize,
    best: usize,
) -> Result<(ParamStore<T>, Vec<usize>)> {
    let epochs: Vec<usize> = average_window(len, best).collect();
    let picked = epochs
        .iter()
        .map(|e| {
            snapshots
                .get(e)
                .ok_or_else(|| Error::validation(format!("checkpoint of epoch {e} was not kept")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ParamStore::average(&picked)?, epochs))
}

/// Picks `floor(rate * N)` distinct tatums, sorted.
pub fn specaugment_tatums<R: Rng>(tatums: usize, rate: f64, rng: &mut R) -> Vec<usize> {
    let k = ((rate * tatums as f64).floor() as usize).min(tatums);
    let mut picked = index::sample(rng, tatums, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Zeroes the pooling windows of the given tatums.
pub fn mask_windows(x: &mut MelFeature, windows: &[Window], tatums: &[usize]) {
    for &n in tatums {
        let (s, e) = windows[n];
        x.zero_frames(s, e);
    }
}

/// Tatum-level SpecAugment: zeroes every frame pooled into
/// `floor(rate * N)` randomly chosen tatums. Returns the masked copy and
/// the chosen tatums.
pub fn tatum_specaugment<R: Rng>(
    x: &MelFeature,
    grid: &TatumGrid,
    rate: f64,
    rng: &mut R,
) -> Result<(MelFeature, Vec<usize>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::validation("SpecAugment rate must lie in [0, 1)"));
    }
    let windows = windows_for(x, grid)?;
    let tatums = specaugment_tatums(windows.len(), rate, rng);
    let mut out = x.clone();
    mask_windows(&mut out, &windows, &tatums);
    Ok((out, tatums))
}
