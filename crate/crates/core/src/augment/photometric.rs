//! Colour, intensity, contrast and sharpness adjustments. Masks are never touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

pub const INTENSITY_SCALE_RANGE: (f64, f64) = (0.7, 1.3);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sharpness {
    None,
    /// Gaussian blur with the given standard deviation in pixels.
    Blur { sigma: f64 },
    /// `x + amount * (x - blur(x, sigma))`.
    Unsharp { amount: f64, sigma: f64 },
}

/// Linear percentile stretch blended into the image with a signed strength.
///
/// `delta = 1` maps the low/high percentiles onto 0/255; negative values move
/// away from the stretched image and flatten contrast instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Contrast {
    pub delta: f64,
    pub low_percentile: f64,
    pub high_percentile: f64,
}

impl Default for Contrast {
    fn default() -> Self {
        Self {
            delta: 0.0,
            low_percentile: 2.0,
            high_percentile: 98.0,
        }
    }
}

impl Contrast {
    pub fn with_delta(delta: f64) -> Self {
        Self {
            delta,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotometricParams {
    /// Additive per-channel offset on the 8-bit scale.
    pub channel_shift: [f64; 3],
    pub intensity_scale: f64,
    pub contrast: Contrast,
    pub sharpness: Sharpness,
}

impl Default for PhotometricParams {
    fn default() -> Self {
        Self {
            channel_shift: [0.0; 3],
            intensity_scale: 1.0,
            contrast: Contrast::default(),
            sharpness: Sharpness::None,
        }
    }
}

impl PhotometricParams {
    pub fn validate(&self) -> Result<()> {
        if self.channel_shift.iter().any(|v| !v.is_finite() || v.abs() > 255.0) {
            return Err(Error::param("channel shift must be finite and within +/-255"));
        }
        let (lo, hi) = INTENSITY_SCALE_RANGE;
        if !(self.intensity_scale >= lo && self.intensity_scale <= hi) {
            return Err(Error::param(format!(
                "intensity scale {} outside [{lo}, {hi}]",
                self.intensity_scale
            )));
        }
        let c = &self.contrast;
        if !(c.delta >= -1.0 && c.delta <= 1.0) {
            return Err(Error::param(format!("contrast delta {} outside [-1, 1]", c.delta)));
        }
        if !(c.low_percentile >= 0.0 && c.low_percentile < c.high_percentile && c.high_percentile <= 100.0) {
            return Err(Error::param("contrast percentiles must satisfy 0 <= low < high <= 100"));
        }
        match self.sharpness {
            Sharpness::None => {}
            Sharpness::Blur { sigma } if sigma >= 0.0 && sigma.is_finite() => {}
            Sharpness::Unsharp { amount, sigma }
                if amount >= 0.0 && amount.is_finite() && sigma >= 0.0 && sigma.is_finite() => {}
            other => return Err(Error::param(format!("invalid sharpness {other:?}"))),
        }
        Ok(())
    }
}

pub(crate) fn to_f64(image: &Image) -> Vec<f64> {
    image.data().iter().map(|v| f64::from(*v)).collect()
}

pub(crate) fn from_f64(width: usize, height: usize, values: &[f64]) -> Image {
    let data = values
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    Image::new(width, height, data).expect("buffer length preserved")
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

/// Separable Gaussian blur of an interleaved plane with mirrored borders.
pub(crate) fn gaussian_blur(values: &[f64], width: usize, height: usize, channels: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let mut acc = 0.0;
                for (j, w) in k.iter().enumerate() {
                    let sx = mirror(x as isize + j as isize - r, width);
                    acc += w * values[(y * width + sx) * channels + c];
                }
                tmp[(y * width + x) * channels + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let mut acc = 0.0;
                for (j, w) in k.iter().enumerate() {
                    let sy = mirror(y as isize + j as isize - r, height);
                    acc += w * tmp[(sy * width + x) * channels + c];
                }
                out[(y * width + x) * channels + c] = acc;
            }
        }
    }
    out
}

/// Nearest-rank percentile over every channel value.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = (p / 100.0 * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

pub(crate) fn contrast_stretch(values: &mut [f64], c: &Contrast) {
    if c.delta == 0.0 {
        return;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, c.low_percentile);
    let hi = percentile(&sorted, c.high_percentile);
    if hi <= lo {
        return;
    }
    let gain = 255.0 / (hi - lo);
    for v in values.iter_mut() {
        let stretched = ((*v - lo) * gain).clamp(0.0, 255.0);
        *v += c.delta * (stretched - *v);
    }
}

pub(crate) fn sharpen(values: &[f64], width: usize, height: usize, s: Sharpness) -> Vec<f64> {
    match s {
        Sharpness::None => values.to_vec(),
        Sharpness::Blur { sigma } => gaussian_blur(values, width, height, 3, sigma),
        Sharpness::Unsharp { amount, sigma } => {
            if amount == 0.0 {
                return values.to_vec();
            }
            let blurred = gaussian_blur(values, width, height, 3, sigma);
            values
                .iter()
                .zip(blurred)
                .map(|(v, b)| v + amount * (v - b))
                .collect()
        }
    }
}

/// Channel shift, intensity scaling, contrast and sharpness, clipped to `[0, 255]`.
pub fn apply_photometric(image: &Image, p: &PhotometricParams) -> Result<Image> {
    p.validate()?;
    let (w, h) = image.dims();
    let mut v = to_f64(image);
    if p.channel_shift != [0.0; 3] || p.intensity_scale != 1.0 {
        for (i, x) in v.iter_mut().enumerate() {
            *x = ((*x + p.channel_shift[i % 3]) * p.intensity_scale).clamp(0.0, 255.0);
        }
    }
    contrast_stretch(&mut v, &p.contrast);
    let v = sharpen(&v, w, h, p.sharpness);
    Ok(from_f64(w, h, &v))
}
