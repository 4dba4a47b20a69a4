//! Synthetic paired data: periodic drum patterns rendered as band-limited
//! decaying noise bursts on a metronomic tatum grid.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, MelFeature, MelOptions, SAMPLE_RATE};
use crate::score::{DrumScore, Instrument, OnsetEvent, TatumGrid, NUM_INSTRUMENTS};

/// Tatums in one 4/4 bar.
pub const TATUMS_PER_BAR: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub pieces: usize,
    /// Tempo range in beats per minute; each piece draws one tempo.
    pub tempo_min: f64,
    pub tempo_max: f64,
    pub bars: usize,
    /// Number of distinct patterns pieces are drawn from.
    pub library_size: usize,
    /// Pattern length in tatums: 8, 16 or 32.
    pub period: usize,
    /// Probability of flipping each cell of the tiled pattern.
    pub variation: f64,
    /// Standard deviation of the background noise; also switches on
    /// random burst shapes and gains when positive.
    pub noise_level: f64,
    /// Time of the first tatum in seconds.
    pub lead_in: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            pieces: 50,
            tempo_min: 100.0,
            tempo_max: 140.0,
            bars: 15,
            library_size: 8,
            period: 16,
            variation: 0.02,
            noise_level: 0.01,
            lead_in: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tempo_min > 0.0 && self.tempo_max >= self.tempo_min) {
            return Err(Error::validation(
                "tempo range must be positive and ordered",
            ));
        }
        if ![8, 16, 32].contains(&self.period) {
            return Err(Error::validation(format!(
                "period must be 8, 16 or 32, got {}",
                self.period
            )));
        }
        if self.pieces == 0 || self.bars == 0 || self.library_size == 0 {
            return Err(Error::validation(
                "pieces, bars and library_size must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.variation)
            || !(self.noise_level >= 0.0)
            || !(self.lead_in >= 0.0)
        {
            return Err(Error::validation(
                "variation must lie in [0, 1]; noise and lead-in must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn tatums(&self) -> usize {
        self.bars * TATUMS_PER_BAR
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticPiece {
    pub name: String,
    pub audio: Vec<f32>,
    pub tempo: f64,
    pub grid: TatumGrid,
    pub onsets: Vec<OnsetEvent>,
    pub score: DrumScore,
}

impl SyntheticPiece {
    pub fn feature(&self) -> Result<MelFeature> {
        features::extract_mel(&self.audio, SAMPLE_RATE, MelOptions::default())
    }

    /// Extracts features and packages the piece for training.
    pub fn into_training(self) -> Result<crate::training::TrainingPiece> {
        Ok(crate::training::TrainingPiece {
            feature: self.feature()?,
            name: self.name,
            grid: self.grid,
            score: self.score,
            onsets: self.onsets,
        })
    }

    /// Writes `<name>.wav`, `<name>.tatums.txt`, `<name>.onsets.txt` and
    /// `<name>.score.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        features::write_wav(
            &dir.join(format!("{}.wav", self.name)),
            &self.audio,
            SAMPLE_RATE,
        )?;
        self.grid
            .save_text(&dir.join(format!("{}.tatums.txt", self.name)))?;
        crate::score::save_onsets(&dir.join(format!("{}.onsets.txt", self.name)), &self.onsets)?;
        self.score
            .save_json(&dir.join(format!("{}.score.json", self.name)))
    }
}

/// Per-instrument onset probability of library patterns.
const DENSITY: [f64; NUM_INSTRUMENTS] = [0.3, 0.25, 0.5];

fn random_pattern<R: Rng>(period: usize, rng: &mut R) -> DrumScore {
    loop {
        let cols: Vec<[bool; NUM_INSTRUMENTS]> = (0..period)
            .map(|_| std::array::from_fn(|m| rng.random_bool(DENSITY[m])))
            .collect();
        let p = DrumScore::from_columns(&cols);
        if (0..NUM_INSTRUMENTS).all(|m| (0..period).any(|n| p.get(m, n))) {
            return p;
        }
    }
}

/// A library of `spec.library_size` patterns.
pub fn pattern_library<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Vec<DrumScore> {
    (0..spec.library_size)
        .map(|_| random_pattern(spec.period, rng))
        .collect()
}

/// A score tiling `pattern` over `tatums` with each cell flipped with
/// probability `variation`.
pub fn tile_pattern<R: Rng>(
    pattern: &DrumScore,
    tatums: usize,
    variation: f64,
    rng: &mut R,
) -> DrumScore {
    let period = pattern.num_tatums();
    let mut s = DrumScore::new(tatums);
    for n in 0..tatums {
        for m in 0..NUM_INSTRUMENTS {
            let flip = variation > 0.0 && rng.random_bool(variation);
            s.set(m, n, pattern.get(m, n % period) != flip);
        }
    }
    s
}

/// Scores only, for language-model training.
pub fn synth_scores(spec: &SyntheticSpec) -> Result<Vec<DrumScore>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let library = pattern_library(spec, &mut rng);
    Ok((0..spec.pieces)
        .map(|_| {
            let p = library.choose(&mut rng).expect("non-empty library");
            tile_pattern(p, spec.tatums(), spec.variation, &mut rng)
        })
        .collect())
}

/// Band edges in Hz, decay time constant in seconds and peak amplitude.
const VOICES: [(f64, f64, f64, f32); NUM_INSTRUMENTS] = [
    (40.0, 150.0, 0.08, 0.8),
    (300.0, 2000.0, 0.06, 0.5),
    (6000.0, 16000.0, 0.025, 0.3),
];
const BURST_SECS: f64 = 0.3;
const TEMPLATES: usize = 4;

/// Band-limited white noise with an exponential decay, peak-normalized.
fn burst<R: Rng>(instrument: usize, planner: &mut FftPlanner<f64>, rng: &mut R) -> Vec<f32> {
    let (lo, hi, decay, amp) = VOICES[instrument];
    let len = (BURST_SECS * SAMPLE_RATE as f64) as usize;
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(normal.sample(rng), 0.0))
        .collect();
    planner.plan_fft_forward(len).process(&mut buf);
    let hz = SAMPLE_RATE as f64 / len as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * hz;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let mut out: Vec<f64> = buf
        .iter()
        .enumerate()
        .map(|(i, c)| c.re * (-(i as f64) / SAMPLE_RATE as f64 / decay).exp())
        .collect();
    let peak = out.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-12);
    out.iter_mut().for_each(|v| *v *= amp as f64 / peak);
    out.into_iter().map(|v| v as f32).collect()
}

/// Renders a score on a grid into audio.
fn render<R: Rng>(
    score: &DrumScore,
    grid: &TatumGrid,
    templates: &[Vec<Vec<f32>>],
    noise_level: f64,
    rng: &mut R,
) -> Vec<f32> {
    let end = grid.times().last().copied().unwrap_or(0.0) + BURST_SECS + 0.2;
    let len = (end * SAMPLE_RATE as f64).ceil() as usize;
    let mut audio = vec![0.0f32; len];
    for n in 0..score.num_tatums() {
        let start = (grid.times()[n] * SAMPLE_RATE as f64).round() as usize;
        for (m, set) in templates.iter().enumerate() {
            if !score.get(m, n) {
                continue;
            }
            let (t, gain) = if noise_level > 0.0 {
                (
                    &set[rng.random_range(0..set.len())],
                    rng.random_range(0.7..1.0),
                )
            } else {
                (&set[0], 1.0)
            };
            for (a, &v) in audio[start..].iter_mut().zip(t) {
                *a += gain * v;
            }
        }
    }
    if noise_level > 0.0 {
        let normal = Normal::new(0.0, noise_level).expect("valid noise level");
        audio
            .iter_mut()
            .for_each(|a| *a += normal.sample(rng) as f32);
    }
    audio
}

/// Generates `spec.pieces` paired pieces.
pub fn synth_data(spec: &SyntheticSpec) -> Result<Vec<SyntheticPiece>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let library = pattern_library(spec, &mut rng);
    let mut planner = FftPlanner::new();
    let templates: Vec<Vec<Vec<f32>>> = (0..NUM_INSTRUMENTS)
        .map(|m| {
            (0..TEMPLATES)
                .map(|_| burst(m, &mut planner, &mut rng))
                .collect()
        })
        .collect();
    let n = spec.tatums();
    (0..spec.pieces)
        .map(|i| {
            let tempo = if spec.tempo_max > spec.tempo_min {
                rng.random_range(spec.tempo_min..spec.tempo_max)
            } else {
                spec.tempo_min
            };
            let interval = 60.0 / tempo / 4.0;
            let grid = TatumGrid::uniform(spec.lead_in, interval, n)?;
            let pattern = library.choose(&mut rng).expect("non-empty library");
            let score = tile_pattern(pattern, n, spec.variation, &mut rng);
            let audio = render(&score, &grid, &templates, spec.noise_level, &mut rng);
            let onsets = score.render_onsets(&grid)?;
            Ok(SyntheticPiece {
                name: format!("piece{i:03}"),
                audio,
                tempo,
                grid,
                onsets,
                score,
            })
        })
        .collect()
}

/// Frequency band in Hz of an instrument's synthetic voice.
pub fn voice_band(instrument: Instrument) -> (f64, f64) {
    let (lo, hi, _, _) = VOICES[instrument.index()];
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{quantize_onsets, FAR_TOLERANCE};

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            pieces: 3,
            bars: 2,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn four_bars_at_120_give_64_tatums() {
        let spec = SyntheticSpec {
            pieces: 1,
            tempo_min: 120.0,
            tempo_max: 120.0,
            bars: 4,
            ..SyntheticSpec::default()
        };
        let p = &synth_data(&spec).unwrap()[0];
        assert_eq!(p.grid.len(), 64);
        assert!((p.grid.times()[1] - p.grid.times()[0] - 0.125).abs() < 1e-12);
    }

    #[test]
    fn noiseless_single_pattern_pieces_are_identical() {
        let spec = SyntheticSpec {
            library_size: 1,
            noise_level: 0.0,
            variation: 0.0,
            tempo_min: 110.0,
            tempo_max: 110.0,
            ..small()
        };
        let d = synth_data(&spec).unwrap();
        for p in &d[1..] {
            assert_eq!(p.audio, d[0].audio);
            assert_eq!(p.score, d[0].score);
        }
    }

    #[test]
    fn onsets_quantize_back_exactly() {
        let d = synth_data(&small()).unwrap();
        for p in &d {
            let (s, r) = quantize_onsets(&p.onsets, &p.grid, FAR_TOLERANCE).unwrap();
            assert_eq!(s, p.score);
            assert_eq!((r.conflict, r.far), (0, 0));
        }
    }

    #[test]
    fn scores_are_periodic_without_variation() {
        let spec = SyntheticSpec {
            variation: 0.0,
            period: 8,
            ..small()
        };
        for s in synth_scores(&spec).unwrap() {
            for n in 8..s.num_tatums() {
                assert_eq!(s.column(n), s.column(n - 8));
            }
        }
        assert!(SyntheticSpec {
            period: 12,
            ..small()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn bursts_land_in_their_bands() {
        let spec = SyntheticSpec {
            pieces: 1,
            noise_level: 0.0,
            ..small()
        };
        let p = &synth_data(&spec).unwrap()[0];
        let feat = p.feature().unwrap();
        assert_eq!(feat.frames(), p.audio.len() / 441);
        let centers = features::band_centers();
        // the loudest band of a bass-drum-only frame is a low band
        let bd_only = (0..p.score.num_tatums()).find(|&n| {
            let c = p.score.column(n);
            c[0] && !c[1] && !c[2] && (n == 0 || p.score.column(n - 1) == [false; 3])
        });
        if let Some(n) = bd_only {
            let t = (p.grid.times()[n] * 100.0).round() as usize + 1;
            let best = (0..80)
                .max_by(|&a, &b| feat.get(0, a, t).total_cmp(&feat.get(0, b, t)))
                .unwrap();
            assert!(centers[best] < 300.0, "{}", centers[best]);
        }
    }
}
