//! Resizing and the per-encoder input normalization schemes.
//!
//! Resampling uses the half-pixel-centre convention: output pixel `i` of `n_out`
//! samples the source at `(i + 0.5) * n_in / n_out - 0.5`, clamped to the edge.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::AttributeKind;
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Image, NormImage, ProbMap};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    #[default]
    Bilinear,
    Nearest,
}

/// Rasters that can be resampled to new dimensions.
pub trait Resize: Sized {
    /// Mode used when the caller has no preference.
    const DEFAULT_MODE: ResizeMode;

    /// Resamples to `width x height`.
    fn resize(&self, width: usize, height: usize, mode: ResizeMode) -> Result<Self>;

    fn resize_default(&self, width: usize, height: usize) -> Result<Self> {
        self.resize(width, height, Self::DEFAULT_MODE)
    }
}

fn check_target(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::param(format!(
            "resize target {width}x{height} must be positive"
        )));
    }
    Ok(())
}

/// Source sample position and blend weight for one output index.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

fn nearest_index(n_in: usize, n_out: usize) -> Vec<usize> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| (((i as f64 + 0.5) * scale).floor() as usize).min(n_in - 1))
        .collect()
}

/// `a + (b - a) * t`, clamped to the segment so constants stay exact and bounds hold.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + (b - a) * t;
    v.clamp(a.min(b), a.max(b))
}

fn resample_bilinear(
    src: &[f64],
    w: usize,
    h: usize,
    ch: usize,
    ow: usize,
    oh: usize,
) -> Vec<f64> {
    if (w, h) == (ow, oh) {
        return src.to_vec();
    }
    let xt = bilinear_taps(w, ow);
    let yt = bilinear_taps(h, oh);
    let mut out = Vec::with_capacity(ow * oh * ch);
    for ty in &yt {
        for tx in &xt {
            for c in 0..ch {
                let at = |x: usize, y: usize| src[(y * w + x) * ch + c];
                let top = lerp(at(tx.lo, ty.lo), at(tx.hi, ty.lo), tx.frac);
                let bottom = lerp(at(tx.lo, ty.hi), at(tx.hi, ty.hi), tx.frac);
                out.push(lerp(top, bottom, ty.frac));
            }
        }
    }
    out
}

fn resample_nearest<P: Copy>(src: &[P], w: usize, h: usize, ch: usize, ow: usize, oh: usize) -> Vec<P> {
    let xi = nearest_index(w, ow);
    let yi = nearest_index(h, oh);
    let mut out = Vec::with_capacity(ow * oh * ch);
    for &sy in &yi {
        for &sx in &xi {
            let base = (sy * w + sx) * ch;
            out.extend_from_slice(&src[base..base + ch]);
        }
    }
    out
}

impl Resize for Image {
    const DEFAULT_MODE: ResizeMode = ResizeMode::Bilinear;

    fn resize(&self, width: usize, height: usize, mode: ResizeMode) -> Result<Self> {
        check_target(width, height)?;
        let (w, h) = self.dims();
        let data = match mode {
            ResizeMode::Nearest => resample_nearest(self.data(), w, h, 3, width, height),
            ResizeMode::Bilinear => {
                let src: Vec<f64> = self.data().iter().map(|v| f64::from(*v)).collect();
                resample_bilinear(&src, w, h, 3, width, height)
                    .into_iter()
                    .map(|v| v.round().clamp(0.0, 255.0) as u8)
                    .collect()
            }
        };
        Image::new(width, height, data)
    }
}

impl<T: Real> Resize for ProbMap<T> {
    const DEFAULT_MODE: ResizeMode = ResizeMode::Bilinear;

    fn resize(&self, width: usize, height: usize, mode: ResizeMode) -> Result<Self> {
        check_target(width, height)?;
        let (w, h) = self.dims();
        let data = match mode {
            ResizeMode::Nearest => resample_nearest(self.data(), w, h, 1, width, height),
            ResizeMode::Bilinear => {
                if (w, h) == (width, height) {
                    return Ok(self.clone());
                }
                let src: Vec<f64> = self.data().iter().map(|v| v.as_f64()).collect();
                resample_bilinear(&src, w, h, 1, width, height)
                    .into_iter()
                    .map(|v| T::of(v).max(T::zero()).min(T::one()))
                    .collect()
            }
        };
        Ok(ProbMap::from_raw(width, height, data))
    }
}

impl Resize for BinaryMask {
    const DEFAULT_MODE: ResizeMode = ResizeMode::Nearest;

    fn resize(&self, width: usize, height: usize, mode: ResizeMode) -> Result<Self> {
        check_target(width, height)?;
        if mode != ResizeMode::Nearest {
            return Err(Error::param(
                "binary masks can only be resized with nearest-neighbour sampling",
            ));
        }
        let (w, h) = self.dims();
        Ok(BinaryMask::from_raw(
            width,
            height,
            resample_nearest(self.data(), w, h, 1, width, height),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationScheme {
    /// `x - mu_c`, 8-bit scale.
    ChannelMeanSubtract,
    /// `(x / 255 - m_c) / s_c`.
    MeanStd,
    /// `x / 127.5 - 1`.
    SymmetricUnit,
    /// `x / 255`.
    Unit,
}

impl FromStr for NormalizationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel-mean-subtract" => Ok(Self::ChannelMeanSubtract),
            "mean-std" => Ok(Self::MeanStd),
            "symmetric-unit" => Ok(Self::SymmetricUnit),
            "unit" => Ok(Self::Unit),
            other => Err(Error::param(format!("unknown normalization scheme `{other}`"))),
        }
    }
}

/// Encoder families and the input scheme each was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseModel {
    Resnet152,
    InceptionResnetV2,
    Densenet169,
    Xception,
    Deeplabv3,
}

impl BaseModel {
    pub fn scheme(self) -> NormalizationScheme {
        match self {
            BaseModel::Resnet152 | BaseModel::InceptionResnetV2 => {
                NormalizationScheme::ChannelMeanSubtract
            }
            BaseModel::Densenet169 => NormalizationScheme::MeanStd,
            BaseModel::Xception => NormalizationScheme::SymmetricUnit,
            BaseModel::Deeplabv3 => NormalizationScheme::Unit,
        }
    }
}

/// Dataset statistics used by the ImageNet-derived schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationParams {
    /// Per-channel mean on the 8-bit scale.
    pub channel_mean: [f64; 3],
    /// Per-channel mean on the unit scale.
    pub mean: [f64; 3],
    /// Per-channel standard deviation on the unit scale.
    pub std: [f64; 3],
}

impl Default for NormalizationParams {
    fn default() -> Self {
        Self {
            channel_mean: [123.68, 116.779, 103.939],
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl NormalizationParams {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        if self
            .channel_mean
            .iter()
            .chain(&self.mean)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config("normalization means must be finite".into()));
        }
        Ok(())
    }

    fn forward(&self, scheme: NormalizationScheme, x: f64, c: usize) -> f64 {
        match scheme {
            NormalizationScheme::ChannelMeanSubtract => x - self.channel_mean[c],
            NormalizationScheme::MeanStd => (x / 255.0 - self.mean[c]) / self.std[c],
            NormalizationScheme::SymmetricUnit => x / 127.5 - 1.0,
            NormalizationScheme::Unit => x / 255.0,
        }
    }

    fn inverse(&self, scheme: NormalizationScheme, y: f64, c: usize) -> f64 {
        match scheme {
            NormalizationScheme::ChannelMeanSubtract => y + self.channel_mean[c],
            NormalizationScheme::MeanStd => (y * self.std[c] + self.mean[c]) * 255.0,
            NormalizationScheme::SymmetricUnit => (y + 1.0) * 127.5,
            NormalizationScheme::Unit => y * 255.0,
        }
    }
}

pub fn normalize<T: Real>(
    image: &Image,
    scheme: NormalizationScheme,
    params: &NormalizationParams,
) -> NormImage<T> {
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| T::of(params.forward(scheme, f64::from(*v), i % 3)))
        .collect();
    NormImage::from_raw(image.width(), image.height(), data, scheme)
}

/// Recovers the 8-bit-scale intensities (unrounded) from a normalized image.
pub fn denormalize<T: Real>(image: &NormImage<T>, params: &NormalizationParams) -> Vec<f64> {
    image
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| params.inverse(image.scheme(), v.as_f64(), i % 3))
        .collect()
}

/// Which segmentation problem a run addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Lesion,
    Attribute(AttributeKind),
}

impl Task {
    pub fn is_attribute(&self) -> bool {
        matches!(self, Task::Attribute(_))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Lesion => f.write_str("lesion"),
            Task::Attribute(k) => write!(f, "attribute:{k}"),
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "lesion" => Ok(Task::Lesion),
            Some(("attribute", kind)) => Ok(Task::Attribute(kind.parse()?)),
            _ => Err(Error::param(format!(
                "unknown task `{s}`; expected `lesion` or `attribute:<kind>`"
            ))),
        }
    }
}

/// Network input sizes as `(height, width)` per task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResizeTargets {
    pub lesion: (usize, usize),
    pub attribute: (usize, usize),
}

impl Default for ResizeTargets {
    fn default() -> Self {
        Self {
            lesion: (192, 256),
            attribute: (384, 576),
        }
    }
}

impl ResizeTargets {
    pub fn for_task(&self, task: Task) -> (usize, usize) {
        match task {
            Task::Lesion => self.lesion,
            Task::Attribute(_) => self.attribute,
        }
    }
}

/// `(height, width)` the task's network consumes.
pub fn task_resize_target(task: Task) -> (usize, usize) {
    ResizeTargets::default().for_task(task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_resize() {
        let img = Image::from_fn(5, 3, |x, y| [x as u8 * 40, y as u8 * 70, 9]).unwrap();
        assert_eq!(img.resize(5, 3, ResizeMode::Bilinear).unwrap(), img);
        assert_eq!(img.resize(5, 3, ResizeMode::Nearest).unwrap(), img);
        let m = ProbMap::<f32>::from_fn(4, 4, |x, y| (x * y) as f32 / 9.0).unwrap();
        assert_eq!(m.resize_default(4, 4).unwrap(), m);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(7, 5, [13, 200, 77]).unwrap();
        let r = img.resize(11, 3, ResizeMode::Bilinear).unwrap();
        assert!(r.data().chunks(3).all(|p| p == [13, 200, 77]));
        let m = ProbMap::<f32>::filled(3, 7, 0.3).unwrap();
        let r = m.resize_default(10, 10).unwrap();
        assert!(r.data().iter().all(|v| *v == 0.3));
    }

    #[test]
    fn half_pixel_bilinear_upsampling() {
        // [[0, 1], [0, 1]] widened to 4 columns: sample positions -0.25, 0.25, 0.75, 1.25
        let m = ProbMap::<f64>::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = m.resize(4, 2, ResizeMode::Bilinear).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn masks_only_resize_nearest() {
        let m = BinaryMask::from_fn(4, 4, |x, _| x < 2).unwrap();
        assert!(m.resize(8, 8, ResizeMode::Bilinear).is_err());
        let r = m.resize_default(8, 2).unwrap();
        assert_eq!(r.data(), &[1, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0]);
        assert!(m.resize(0, 2, ResizeMode::Nearest).is_err());
    }

    #[test]
    fn normalization_endpoints() {
        let p = NormalizationParams::default();
        let white = Image::filled(1, 1, [255, 255, 255]).unwrap();
        let black = Image::filled(1, 1, [0, 0, 0]).unwrap();
        assert_eq!(normalize::<f64>(&white, NormalizationScheme::Unit, &p).data()[0], 1.0);
        assert_eq!(normalize::<f64>(&black, NormalizationScheme::SymmetricUnit, &p).data()[0], -1.0);
        assert_eq!(normalize::<f64>(&white, NormalizationScheme::SymmetricUnit, &p).data()[0], 1.0);
        // a red channel equal to the configured mean normalizes to zero
        let p2 = NormalizationParams {
            channel_mean: [124.0, 116.779, 103.939],
            ..p
        };
        let px = Image::filled(1, 1, [124, 0, 0]).unwrap();
        let n = normalize::<f64>(&px, NormalizationScheme::ChannelMeanSubtract, &p2);
        assert_eq!(n.data()[0], 0.0);
        let n = normalize::<f64>(&px, NormalizationScheme::ChannelMeanSubtract, &p);
        assert!((n.data()[0] - 0.32).abs() < 1e-12);
    }

    #[test]
    fn base_models_map_to_schemes() {
        assert_eq!(BaseModel::Resnet152.scheme(), NormalizationScheme::ChannelMeanSubtract);
        assert_eq!(BaseModel::InceptionResnetV2.scheme(), NormalizationScheme::ChannelMeanSubtract);
        assert_eq!(BaseModel::Densenet169.scheme(), NormalizationScheme::MeanStd);
        assert_eq!(BaseModel::Xception.scheme(), NormalizationScheme::SymmetricUnit);
        assert_eq!(BaseModel::Deeplabv3.scheme(), NormalizationScheme::Unit);
    }

    #[test]
    fn task_targets() {
        assert_eq!(task_resize_target(Task::Lesion), (192, 256));
        assert_eq!(
            task_resize_target(Task::Attribute(AttributeKind::Streaks)),
            (384, 576)
        );
        assert_eq!("lesion".parse::<Task>().unwrap(), Task::Lesion);
        assert_eq!(
            "attribute:globules".parse::<Task>().unwrap(),
            Task::Attribute(AttributeKind::Globules)
        );
        assert!("attribute".parse::<Task>().is_err());
        assert!("segmentation".parse::<Task>().is_err());
        assert_eq!(Task::Attribute(AttributeKind::Streaks).to_string(), "attribute:streaks");
    }

    proptest! {
        #[test]
        fn normalize_inverts(pixels in prop::collection::vec(any::<u8>(), 3..90), scheme in 0usize..4) {
            let n = pixels.len() / 3;
            let img = Image::new(n, 1, pixels[..n * 3].to_vec()).unwrap();
            let scheme = [
                NormalizationScheme::ChannelMeanSubtract,
                NormalizationScheme::MeanStd,
                NormalizationScheme::SymmetricUnit,
                NormalizationScheme::Unit,
            ][scheme];
            let p = NormalizationParams::default();
            let back = denormalize(&normalize::<f32>(&img, scheme, &p), &p);
            for (a, b) in img.data().iter().zip(back) {
                prop_assert!((f64::from(*a) - b).abs() < 1e-5 * 255.0);
            }
            let back64 = denormalize(&normalize::<f64>(&img, scheme, &p), &p);
            for (a, b) in img.data().iter().zip(back64) {
                prop_assert!((f64::from(*a) - b).abs() < 1e-5);
            }
        }

        #[test]
        fn resize_preserves_bounds(values in prop::collection::vec(0.0f32..=1.0, 12), w in 1usize..9, h in 1usize..9) {
            let m = ProbMap::new(4, 3, values).unwrap();
            let r = m.resize(w, h, ResizeMode::Bilinear).unwrap();
            prop_assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(r.dims(), (w, h));
            let mask = BinaryMask::from_fn(4, 3, |x, y| (x + y) % 2 == 0).unwrap();
            let rm = mask.resize_default(w, h).unwrap();
            prop_assert!(rm.data().iter().all(|v| *v <= 1));
        }
    }
}
