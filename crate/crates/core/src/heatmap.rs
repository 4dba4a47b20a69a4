//! PNG heatmaps of attention matrices and positional encodings.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

/// Dark-to-bright anchor colors, interpolated linearly.
const COLORMAP: [[f64; 3]; 5] = [
    [0.0, 0.0, 4.0],
    [81.0, 18.0, 124.0],
    [183.0, 55.0, 121.0],
    [252.0, 137.0, 97.0],
    [252.0, 253.0, 191.0],
];

/// Maps `t` in `[0, 1]` to a color.
pub fn color(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let x = t * (COLORMAP.len() - 1) as f64;
    let i = (x.floor() as usize).min(COLORMAP.len() - 2);
    let f = x - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    Rgb(std::array::from_fn(|c| {
        (a[c] + f * (b[c] - a[c])).round() as u8
    }))
}

/// Renders a row-major `rows x cols` matrix scaled to its own range; each
/// cell becomes a `scale x scale` block.
pub fn render(values: &[f64], rows: usize, cols: usize, scale: u32) -> Result<RgbImage> {
    if rows == 0 || cols == 0 || values.len() != rows * cols {
        return Err(Error::validation(format!(
            "heatmap needs {rows} x {cols} values, got {}",
            values.len()
        )));
    }
    let scale = scale.max(1);
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = RgbImage::from_fn(cols as u32 * scale, rows as u32 * scale, |x, y| {
        let (r, c) = ((y / scale) as usize, (x / scale) as usize);
        color((values[r * cols + c] - lo) / span)
    });
    Ok(img)
}

/// Block size that makes the longer side at least `target` pixels.
pub fn auto_scale(rows: usize, cols: usize, target: u32) -> u32 {
    let longest = rows.max(cols).max(1) as u32;
    target.div_ceil(longest).max(1)
}

pub fn save(values: &[f64], rows: usize, cols: usize, path: &Path) -> Result<()> {
    let img = render(values, rows, cols, auto_scale(rows, cols, 256))?;
    img.save(path)?;
    Ok(())
}
