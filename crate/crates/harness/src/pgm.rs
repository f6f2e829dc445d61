//! Channel-mean heatmaps written as binary PGM (P5).

use std::fs;
use std::path::Path;

use msfuse_core::{Real, Tensor};
use serde::Serialize;

/// Normalized 8-bit map of one image's channel mean.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Heatmap {
    pub source: String,
    pub height: usize,
    pub width: usize,
    /// Range of the channel-mean map before normalization.
    pub min: f64,
    pub max: f64,
    #[serde(skip)]
    pub pixels: Vec<u8>,
}

/// Mean over channels of image `b`.
pub fn channel_mean<T: Real>(t: &Tensor<T>, b: usize) -> msfuse_core::Result<Vec<f64>> {
    let [_, c, h, w] = t.dims4()?;
    let plane = h * w;
    let image = &t.data()[b * c * plane..(b + 1) * c * plane];
    let mut acc = vec![0.0f64; plane];
    for ch in image.chunks_exact(plane) {
        for (a, v) in acc.iter_mut().zip(ch) {
            *a += v.as_f64();
        }
    }
    for a in &mut acc {
        *a /= c as f64;
    }
    Ok(acc)
}

/// Min-max scale to `0..=255`; a constant map becomes all 128.
pub fn normalize(values: &[f64]) -> (f64, f64, Vec<u8>) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let pixels = if span > 0.0 && span.is_finite() {
        values
            .iter()
            .map(|v| ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        vec![128; values.len()]
    };
    (min, max, pixels)
}

/// Heatmap of the first image in the batch.
pub fn heatmap<T: Real>(source: &str, t: &Tensor<T>) -> msfuse_core::Result<Heatmap> {
    let [_, _, h, w] = t.dims4()?;
    let (min, max, pixels) = normalize(&channel_mean(t, 0)?);
    Ok(Heatmap {
        source: source.to_string(),
        height: h,
        width: w,
        min,
        max,
        pixels,
    })
}

pub fn encode(map: &Heatmap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend_from_slice(&map.pixels);
    out
}

pub fn write(path: &Path, map: &Heatmap) -> std::io::Result<()> {
    fs::write(path, encode(map))
}
