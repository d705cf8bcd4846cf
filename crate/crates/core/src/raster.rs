//! Raster types shared by every pipeline stage and the elementary algebra on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Interleaved 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// Per-pixel foreground belief in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Binary raster with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// Real-valued RGB raster produced by one of the normalization schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct NormImage<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
    scheme: crate::preprocess::NormalizationScheme,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::param(format!(
            "raster dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

fn check_len(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
    check_dims(width, height)?;
    if len != width * height * channels {
        return Err(Error::InvalidValue(format!(
            "buffer of length {len} does not match {width}x{height}x{channels}"
        )));
    }
    Ok(())
}

/// Index permutations that map a raster onto itself without resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Permutation {
    FlipHorizontal,
    FlipVertical,
    /// Quarter turn counter-clockwise; swaps width and height.
    Rot90,
    /// Quarter turn clockwise; inverse of [`Permutation::Rot90`].
    Rot270,
}

impl Permutation {
    pub fn inverse(self) -> Self {
        match self {
            Permutation::Rot90 => Permutation::Rot270,
            Permutation::Rot270 => Permutation::Rot90,
            other => other,
        }
    }

    fn output_dims(self, width: usize, height: usize) -> (usize, usize) {
        match self {
            Permutation::FlipHorizontal | Permutation::FlipVertical => (width, height),
            Permutation::Rot90 | Permutation::Rot270 => (height, width),
        }
    }

    /// Source coordinate for output pixel `(x, y)`.
    fn source(self, x: usize, y: usize, width: usize, height: usize) -> (usize, usize) {
        match self {
            Permutation::FlipHorizontal => (width - 1 - x, y),
            Permutation::FlipVertical => (x, height - 1 - y),
            // output is height wide; row y of the output is column (width-1-y) of the input
            Permutation::Rot90 => (width - 1 - y, x),
            Permutation::Rot270 => (y, height - 1 - x),
        }
    }
}

pub(crate) fn permute_plane<P: Copy>(
    data: &[P],
    width: usize,
    height: usize,
    channels: usize,
    p: Permutation,
) -> (Vec<P>, usize, usize) {
    let (ow, oh) = p.output_dims(width, height);
    let mut out = Vec::with_capacity(data.len());
    for y in 0..oh {
        for x in 0..ow {
            let (sx, sy) = p.source(x, y, width, height);
            let base = (sy * width + sx) * channels;
            out.extend_from_slice(&data[base..base + channels]);
        }
    }
    (out, ow, oh)
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_len(width, height, Self::CHANNELS, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn permute(&self, p: Permutation) -> Self {
        let (data, width, height) = permute_plane(&self.data, self.width, self.height, 3, p);
        Self {
            width,
            height,
            data,
        }
    }
}

impl<T: Real> ProbMap<T> {
    /// Validates every value: NaN, infinities and values outside `[0, 1]` are rejected.
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        check_len(width, height, 1, data.len())?;
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < T::zero() || **v > T::one())
        {
            return Err(Error::InvalidValue(format!(
                "probability map value {v} at index {i} is not a finite value in [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Skips validation; callers guarantee the `[0, 1]` invariant.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| *v >= T::zero() && *v <= T::one()));
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn permute(&self, p: Permutation) -> Self {
        let (data, width, height) = permute_plane(&self.data, self.width, self.height, 1, p);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn cast<U: Real>(&self) -> ProbMap<U> {
        let data = self
            .data
            .iter()
            .map(|v| U::of(v.as_f64()).max(U::zero()).min(U::one()))
            .collect();
        ProbMap::from_raw(self.width, self.height, data)
    }
}

impl BinaryMask {
    /// Accepts only `0` and `1` values.
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_len(width, height, 1, data.len())?;
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::InvalidValue(format!(
                "mask value {v} at index {i} is not binary"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            data: vec![0; width * height],
        })
    }

    pub fn ones(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            data: vec![1; width * height],
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Self {
        debug_assert!(data.iter().all(|v| *v <= 1));
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|v| **v == 1).count()
    }

    pub fn any(&self) -> bool {
        self.data.contains(&1)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| *a <= *b)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        ensure_same_dims(self.dims(), other.dims())?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a & b).collect();
        Ok(BinaryMask::from_raw(self.width, self.height, data))
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|v| 1 - v).collect(),
        )
    }

    /// Mask as a `{0, 1}` probability map, the form loss kernels take targets in.
    pub fn to_prob<T: Real>(&self) -> ProbMap<T> {
        ProbMap::from_raw(
            self.width,
            self.height,
            self.data
                .iter()
                .map(|v| if *v == 1 { T::one() } else { T::zero() })
                .collect(),
        )
    }

    pub fn permute(&self, p: Permutation) -> Self {
        let (data, width, height) = permute_plane(&self.data, self.width, self.height, 1, p);
        Self {
            width,
            height,
            data,
        }
    }
}

impl<T: Real> NormImage<T> {
    pub(crate) fn from_raw(
        width: usize,
        height: usize,
        data: Vec<T>,
        scheme: crate::preprocess::NormalizationScheme,
    ) -> Self {
        Self {
            width,
            height,
            data,
            scheme,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn scheme(&self) -> crate::preprocess::NormalizationScheme {
        self.scheme
    }
}

pub(crate) fn ensure_same_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension { expected, actual });
    }
    Ok(())
}

/// Marker/mask threshold pair with `t_high >= t_low`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholdPair")]
pub struct ThresholdPair {
    t_high: f64,
    t_low: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThresholdPair {
    t_high: f64,
    t_low: f64,
}

impl TryFrom<RawThresholdPair> for ThresholdPair {
    type Error = Error;

    fn try_from(r: RawThresholdPair) -> Result<Self> {
        Self::new(r.t_high, r.t_low)
    }
}

impl ThresholdPair {
    pub fn new(t_high: f64, t_low: f64) -> Result<Self> {
        for (name, t) in [("t_high", t_high), ("t_low", t_low)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::param(format!("{name} = {t} must lie in (0, 1)")));
            }
        }
        if t_high < t_low {
            return Err(Error::param(format!(
                "t_high = {t_high} must not be below t_low = {t_low}"
            )));
        }
        Ok(Self { t_high, t_low })
    }

    pub fn t_high(&self) -> f64 {
        self.t_high
    }

    pub fn t_low(&self) -> f64 {
        self.t_low
    }
}

/// Smoothing coefficients of the Jaccard-style losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients<T> {
    alpha: T,
    beta: T,
}

impl<T: Real> LossCoefficients<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self> {
        if !(alpha >= T::zero()) || !alpha.is_finite() {
            return Err(Error::param(format!("alpha = {alpha} must be finite and >= 0")));
        }
        if !(beta > T::zero()) || !beta.is_finite() {
            return Err(Error::param(format!("beta = {beta} must be finite and > 0")));
        }
        Ok(Self { alpha, beta })
    }

    /// alpha = 1, beta = 1, used with the lesion loss.
    pub fn lesion() -> Self {
        Self {
            alpha: T::one(),
            beta: T::one(),
        }
    }

    /// alpha = 0, beta = 1, used with the attribute loss.
    pub fn attribute() -> Self {
        Self {
            alpha: T::zero(),
            beta: T::one(),
        }
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn beta(&self) -> T {
        self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapStats<T> {
    pub min: T,
    pub max: T,
    pub mean: T,
}

pub fn map_stats<T: Real>(map: &ProbMap<T>) -> MapStats<T> {
    let mut min = T::infinity();
    let mut max = T::neg_infinity();
    let mut sum = 0.0f64;
    for &v in map.data() {
        min = min.min(v);
        max = max.max(v);
        sum += v.as_f64();
    }
    MapStats {
        min,
        max,
        mean: T::of(sum / map.data().len() as f64),
    }
}

/// `1` wherever the map is at least `t`.
pub fn threshold<T: Real>(map: &ProbMap<T>, t: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param(format!("threshold {t} outside [0, 1]")));
    }
    let t = T::of(t);
    let data = map.data().iter().map(|v| (*v >= t) as u8).collect();
    Ok(BinaryMask::from_raw(map.width(), map.height(), data))
}

/// Anything that can scale a probability map pixel by pixel.
pub trait PixelFactor<T> {
    fn factor_dims(&self) -> (usize, usize);
    fn factor(&self, index: usize) -> T;
}

impl<T: Real> PixelFactor<T> for ProbMap<T> {
    fn factor_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn factor(&self, index: usize) -> T {
        self.data[index]
    }
}

impl<T: Real> PixelFactor<T> for BinaryMask {
    fn factor_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn factor(&self, index: usize) -> T {
        if self.data[index] == 1 {
            T::one()
        } else {
            T::zero()
        }
    }
}

pub fn pixelwise_multiply<T: Real, F: PixelFactor<T>>(a: &ProbMap<T>, b: &F) -> Result<ProbMap<T>> {
    ensure_same_dims(a.dims(), b.factor_dims())?;
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| (*v * b.factor(i)).min(T::one()).max(T::zero()))
        .collect();
    Ok(ProbMap::from_raw(a.width(), a.height(), data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, v: &[f32]) -> ProbMap<f32> {
        ProbMap::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn stats_examples() {
        let s = map_stats(&ProbMap::<f32>::filled(3, 2, 0.5).unwrap());
        assert_eq!((s.min, s.max, s.mean), (0.5, 0.5, 0.5));
        let s = map_stats(&ProbMap::<f64>::filled(2, 2, 0.0).unwrap());
        assert_eq!((s.min, s.max, s.mean), (0.0, 0.0, 0.0));
        let s = map_stats(&ProbMap::<f64>::new(2, 1, vec![0.2, 0.8]).unwrap());
        assert_eq!((s.min, s.max), (0.2, 0.8));
        assert!((s.mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn threshold_examples() {
        let m = map(2, 1, &[0.3, 0.8]);
        assert_eq!(threshold(&m, 0.0).unwrap().data(), &[1, 1]);
        assert_eq!(threshold(&m, 0.5).unwrap().data(), &[0, 1]);
        let half = ProbMap::<f32>::filled(2, 2, 0.5).unwrap();
        assert_eq!(threshold(&half, 0.5).unwrap().count_ones(), 4);
        assert!(matches!(threshold(&m, 1.5), Err(Error::Parameter(_))));
        assert!(matches!(threshold(&m, -0.1), Err(Error::Parameter(_))));
    }

    #[test]
    fn multiply_examples() {
        let a = map(2, 1, &[0.4, 0.6]);
        assert_eq!(pixelwise_multiply(&a, &BinaryMask::ones(2, 1).unwrap()).unwrap(), a);
        let z = pixelwise_multiply(&a, &BinaryMask::zeros(2, 1).unwrap()).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0]);
        let m = BinaryMask::new(2, 1, vec![1, 0]).unwrap();
        assert_eq!(pixelwise_multiply(&a, &m).unwrap().data(), &[0.4, 0.0]);
        let other = map(1, 2, &[0.1, 0.1]);
        assert!(matches!(
            pixelwise_multiply(&a, &other),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn nan_and_range_are_rejected() {
        assert!(ProbMap::<f32>::new(1, 1, vec![f32::NAN]).is_err());
        assert!(ProbMap::<f64>::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(ProbMap::<f32>::new(2, 1, vec![0.5, 1.01]).is_err());
        assert!(ProbMap::<f32>::new(0, 1, vec![]).is_err());
        assert!(BinaryMask::new(1, 1, vec![2]).is_err());
        assert!(Image::new(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn threshold_pair_invariant() {
        assert!(ThresholdPair::new(0.8, 0.45).is_ok());
        assert!(ThresholdPair::new(0.5, 0.5).is_ok());
        assert!(ThresholdPair::new(0.4, 0.5).is_err());
        assert!(ThresholdPair::new(1.0, 0.5).is_err());
        assert!(LossCoefficients::<f64>::new(0.0, 0.0).is_err());
        assert!(LossCoefficients::<f64>::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn permutations_invert() {
        let img = Image::from_fn(3, 2, |x, y| [x as u8, y as u8, (x * 10 + y) as u8]).unwrap();
        for p in [
            Permutation::FlipHorizontal,
            Permutation::FlipVertical,
            Permutation::Rot90,
            Permutation::Rot270,
        ] {
            assert_eq!(img.permute(p).permute(p.inverse()), img);
        }
        let r = img.permute(Permutation::Rot90);
        assert_eq!(r.dims(), (2, 3));
        // counter-clockwise: the top-right input pixel lands top-left
        assert_eq!(r.pixel(0, 0), img.pixel(2, 0));
        assert_eq!(r.pixel(1, 0), img.pixel(2, 1));
        assert_eq!(r.pixel(0, 2), img.pixel(0, 0));
    }

    proptest! {
        #[test]
        fn threshold_is_monotone(values in prop::collection::vec(0.0f32..=1.0, 1..64), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let m = ProbMap::new(values.len(), 1, values).unwrap();
            let high = threshold(&m, hi).unwrap();
            let low = threshold(&m, lo).unwrap();
            prop_assert!(high.is_subset_of(&low));
        }

        #[test]
        fn multiply_stays_in_unit_interval(pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..64)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let n = a.len();
            let p = pixelwise_multiply(&ProbMap::new(n, 1, a).unwrap(), &ProbMap::new(n, 1, b).unwrap()).unwrap();
            prop_assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
