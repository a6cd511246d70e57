//! Per-frame scores used by the candidate gates and the clustering step.

use serde::{Deserialize, Serialize};

use crate::frame::Frame;

use super::KeyframeError;

/// Rec.601 luma.
#[inline]
pub fn luma(rgb: [u8; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

fn luma_bin(rgb: [u8; 3]) -> usize {
    luma(rgb).round().clamp(0.0, 255.0) as usize
}

/// Mean luma in `[0, 255]`.
pub fn brightness_score(frame: &Frame) -> f64 {
    let sum: f64 = frame.rgb_pixels().map(luma).sum();
    sum / frame.pixel_count() as f64
}

/// Shannon entropy (bits) of the 256-bin luma histogram.
pub fn entropy_score(frame: &Frame) -> f64 {
    let mut hist = [0u64; 256];
    for p in frame.rgb_pixels() {
        hist[luma_bin(p)] += 1;
    }
    let n = frame.pixel_count() as f64;
    let h: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // -0.0 for a single occupied bin
    h.max(0.0)
}

/// Per-channel histograms, each L1-normalised, concatenated R‖G‖B.
///
/// Bins are `ceil(256 / bins)` values wide; the last bin absorbs whatever
/// remains.
pub fn color_histogram(frame: &Frame, bins: usize) -> Result<Vec<f64>, KeyframeError> {
    if bins < 1 {
        return Err(KeyframeError::InvalidParams(
            "histogram bins must be >= 1".into(),
        ));
    }
    let width = 256usize.div_ceil(bins);
    let mut counts = vec![0u64; 3 * bins];
    for p in frame.rgb_pixels() {
        for (ch, &v) in p.iter().enumerate() {
            let bin = (v as usize / width).min(bins - 1);
            counts[ch * bins + bin] += 1;
        }
    }
    let n = frame.pixel_count() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Luma response of the 4-neighbour Laplacian with replicate padding.
pub fn laplacian_response(frame: &Frame) -> Result<Vec<f64>, KeyframeError> {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    if w < 3 || h < 3 {
        return Err(KeyframeError::FrameTooSmall {
            width: frame.width(),
            height: frame.height(),
        });
    }
    let lum: Vec<f64> = frame.rgb_pixels().map(luma).collect();
    let at = |x: usize, y: usize| lum[y * w + x];
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(w - 1);
            out.push(at(x, up) + at(x, down) + at(left, y) + at(right, y) - 4.0 * at(x, y));
        }
    }
    Ok(out)
}

/// Population variance of the Laplacian response; low values mean blur.
pub fn laplacian_variance(frame: &Frame) -> Result<f64, KeyframeError> {
    let r = laplacian_response(frame)?;
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub brightness: f64,
    pub entropy: f64,
    pub histogram: Vec<f64>,
    pub laplacian_variance: f64,
}

impl FrameFeatures {
    pub fn compute(frame: &Frame, bins: usize) -> Result<Self, KeyframeError> {
        Ok(Self {
            brightness: brightness_score(frame),
            entropy: entropy_score(frame),
            histogram: color_histogram(frame, bins)?,
            laplacian_variance: laplacian_variance(frame)?,
        })
    }
}
