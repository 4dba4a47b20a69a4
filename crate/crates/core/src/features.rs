//! Log-mel spectrogram features at 100 frames per second.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::arrays::{ArrayData, ArrayFile};
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 44_100;
pub const WINDOW: usize = 2048;
pub const HOP: usize = 441;
pub const N_MELS: usize = 80;
pub const F_MIN: f64 = 20.0;
pub const F_MAX: f64 = 20_000.0;
pub const FRAME_RATE: f64 = SAMPLE_RATE as f64 / HOP as f64;
/// Dynamic range kept below the per-recording maximum.
pub const DB_FLOOR: f64 = -80.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MelOptions {
    /// Map to dB relative to the recording maximum, floor at -80 dB and
    /// rescale to `[0, 1]`. When false the raw mel magnitudes are kept.
    pub normalize: bool,
}

impl Default for MelOptions {
    fn default() -> Self {
        MelOptions { normalize: true }
    }
}

/// Mel spectrogram, `[channels, N_MELS, frames]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFeature {
    channels: usize,
    frames: usize,
    values: Vec<f32>,
}

impl MelFeature {
    pub fn new(channels: usize, frames: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 || frames == 0 {
            return Err(Error::validation(
                "feature needs at least one channel and frame",
            ));
        }
        if values.len() != channels * N_MELS * frames {
            return Err(Error::validation(format!(
                "feature buffer has {} values, expected {channels} x {N_MELS} x {frames}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(
                "feature values must be finite and nonnegative",
            ));
        }
        Ok(MelFeature {
            channels,
            frames,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        N_MELS
    }

    pub fn get(&self, channel: usize, band: usize, frame: usize) -> f32 {
        self.values[(channel * N_MELS + band) * self.frames + frame]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, N_MELS, self.frames]
    }

    /// Selects one channel as a single-channel feature.
    pub fn channel(&self, c: usize) -> MelFeature {
        let n = N_MELS * self.frames;
        MelFeature {
            channels: 1,
            frames: self.frames,
            values: self.values[c * n..(c + 1) * n].to_vec(),
        }
    }

    /// Frames `[start, start + len)` of every channel.
    pub fn crop(&self, start: usize, len: usize) -> MelFeature {
        let mut values = Vec::with_capacity(self.channels * N_MELS * len);
        for row in self.values.chunks_exact(self.frames) {
            values.extend_from_slice(&row[start..start + len]);
        }
        MelFeature {
            channels: self.channels,
            frames: len,
            values,
        }
    }

    /// Zeroes every band of every channel over the frame range.
    pub fn zero_frames(&mut self, start: usize, end: usize) {
        let frames = self.frames;
        for row in self.values.chunks_exact_mut(frames) {
            row[start..end].fill(0.0);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = ArrayFile::default();
        file.insert(
            "mel",
            vec![self.channels, N_MELS, self.frames],
            ArrayData::F32(self.values.clone()),
        );
        file.metadata
            .insert("frame_rate".into(), FRAME_RATE.to_string());
        file.metadata.insert(
            "channels".into(),
            if self.channels == 2 {
                "music,drum"
            } else {
                "music"
            }
            .into(),
        );
        file.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = ArrayFile::load(path)?;
        let arr = file
            .get("mel")
            .ok_or_else(|| Error::format(path, "no `mel` array in feature file"))?;
        let [c, f, t] = <[usize; 3]>::try_from(arr.shape.as_slice())
            .map_err(|_| Error::format(path, "mel array must be 3-D"))?;
        if f != N_MELS {
            return Err(Error::format(
                path,
                format!("expected {N_MELS} mel bands, found {f}"),
            ));
        }
        MelFeature::new(c, t, arr.data.to_f32()).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies of the mel bands in Hz.
pub fn band_centers() -> Vec<f64> {
    mel_edges()[1..=N_MELS].to_vec()
}

fn mel_edges() -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(F_MIN), hz_to_mel(F_MAX));
    (0..N_MELS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
        .collect()
}

/// Triangular filters on FFT bins: `(first_bin, weights)` per band.
struct MelBank {
    bands: Vec<(usize, Vec<f64>)>,
}

impl MelBank {
    fn new() -> Self {
        let edges = mel_edges();
        let bin_hz = SAMPLE_RATE as f64 / WINDOW as f64;
        let n_bins = WINDOW / 2 + 1;
        let bands = (0..N_MELS)
            .map(|b| {
                let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
                let first = ((l / bin_hz).floor() as usize + 1).min(n_bins);
                let last = ((r / bin_hz).ceil() as usize).min(n_bins);
                let weights = (first..last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= c {
                            (f - l) / (c - l)
                        } else {
                            (r - f) / (r - c)
                        }
                        .max(0.0)
                    })
                    .collect();
                (first, weights)
            })
            .collect();
        MelBank { bands }
    }

    fn apply(&self, magnitude: &[f64], out: &mut [f64]) {
        for (o, (first, w)) in out.iter_mut().zip(&self.bands) {
            *o = w.iter().zip(&magnitude[*first..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Mel magnitudes for a mono 44.1 kHz signal. Frame `t` is centered on
/// sample `t * HOP` with zero padding, giving `floor(len / HOP)` frames.
pub fn extract_mel(samples: &[f32], sample_rate: u32, opts: MelOptions) -> Result<MelFeature> {
    if sample_rate != SAMPLE_RATE {
        return Err(Error::validation(format!(
            "sample rate {sample_rate} Hz unsupported; expected {SAMPLE_RATE} Hz"
        )));
    }
    let frames = samples.len() / HOP;
    if frames == 0 {
        return Err(Error::validation(format!(
            "audio too short: {} samples, need at least {HOP}",
            samples.len()
        )));
    }
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(WINDOW);
    let window: Vec<f64> = (0..WINDOW)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / WINDOW as f64).cos())
        .collect();
    let bank = MelBank::new();
    let n_bins = WINDOW / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut mag = vec![0.0; n_bins];
    let mut mel = vec![0.0; N_MELS];
    // band-major result
    let mut out = vec![0.0f64; N_MELS * frames];
    let half = (WINDOW / 2) as isize;
    for t in 0..frames {
        let start = (t * HOP) as isize - half;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let x = if idx >= 0 && (idx as usize) < samples.len() {
                samples[idx as usize] as f64
            } else {
                0.0
            };
            *slot = Complex::new(x * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (m, c) in mag.iter_mut().zip(&buf) {
            *m = c.norm();
        }
        bank.apply(&mag, &mut mel);
        for (b, &v) in mel.iter().enumerate() {
            out[b * frames + t] = v;
        }
    }
    if opts.normalize {
        let max = out.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            for v in out.iter_mut() {
                let db = if *v > 0.0 {
                    (20.0 * (*v / max).log10()).max(DB_FLOOR)
                } else {
                    DB_FLOOR
                };
                *v = (db - DB_FLOOR) / -DB_FLOOR;
            }
        } else {
            out.fill(0.0);
        }
    }
    MelFeature::new(1, frames, out.into_iter().map(|v| v as f32).collect())
}

/// Converts a normalized feature value back to dB relative to the maximum.
pub fn to_db(value: f32) -> f64 {
    value as f64 * -DB_FLOOR + DB_FLOOR
}

/// Stacks a music and a drum channel into one two-channel feature.
pub fn stack_channels(music: &MelFeature, drum: &MelFeature) -> Result<MelFeature> {
    if music.channels != 1 || drum.channels != 1 {
        return Err(Error::validation(
            "stacking expects single-channel features",
        ));
    }
    if music.frames != drum.frames {
        return Err(Error::validation(format!(
            "music has {} frames but drum has {}",
            music.frames, drum.frames
        )));
    }
    let mut values = music.values.clone();
    values.extend_from_slice(&drum.values);
    MelFeature::new(2, music.frames, values)
}

/// Reads a WAV file and averages its channels to mono.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mono = interleaved
        .chunks_exact(channels)
        .map(|c| c.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Writes mono 16-bit PCM.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Feature for a recording, optionally stacked with a drum-stem channel.
pub fn features_from_wav(music: &Path, drum: Option<&Path>) -> Result<MelFeature> {
    let load = |p: &Path| -> Result<MelFeature> {
        let (s, sr) = read_wav(p)?;
        extract_mel(&s, sr, MelOptions::default())
    };
    let m = load(music)?;
    match drum {
        Some(d) => stack_channels(&m, &load(d)?),
        None => Ok(m),
    }
}
