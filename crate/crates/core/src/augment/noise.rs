use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::photometric::{from_f64, to_f64};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::rng::PipelineRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Additive, `strength` is the standard deviation in intensity levels.
    Gaussian,
    /// Multiplicative `x * (1 + n)`, `strength` is the standard deviation of `n`.
    Speckle,
    /// `strength` is the fraction of pixels forced to black or white.
    SaltPepper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub kind: NoiseKind,
    pub strength: f64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.strength >= 0.0) || !self.strength.is_finite() {
            return Err(Error::param(format!(
                "noise strength {} must be finite and >= 0",
                self.strength
            )));
        }
        if self.kind == NoiseKind::SaltPepper && self.strength > 1.0 {
            return Err(Error::param("salt & pepper fraction cannot exceed 1"));
        }
        Ok(())
    }
}

pub fn apply_noise(image: &Image, p: &NoiseParams, seed: u64) -> Result<Image> {
    p.validate()?;
    if p.strength == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = PipelineRng::seed_from_u64(seed);
    let (w, h) = image.dims();
    match p.kind {
        NoiseKind::Gaussian | NoiseKind::Speckle => {
            let normal = Normal::new(0.0, p.strength).expect("validated strength");
            let mut v = to_f64(image);
            for x in v.iter_mut() {
                let n = normal.sample(&mut rng);
                *x = match p.kind {
                    NoiseKind::Gaussian => *x + n,
                    _ => *x * (1.0 + n),
                };
            }
            Ok(from_f64(w, h, &v))
        }
        NoiseKind::SaltPepper => {
            let pixels = w * h;
            let count = ((p.strength * pixels as f64).round() as usize).min(pixels);
            let mut data = image.data().to_vec();
            for idx in sample(&mut rng, pixels, count) {
                let v = if rng.random::<bool>() { 255 } else { 0 };
                data[idx * 3..idx * 3 + 3].fill(v);
            }
            Image::new(w, h, data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_strength_is_identity() {
        let img = Image::from_fn(6, 5, |x, y| [x as u8 * 9, y as u8 * 9, 3]).unwrap();
        for kind in [NoiseKind::Gaussian, NoiseKind::Speckle, NoiseKind::SaltPepper] {
            let p = NoiseParams { kind, strength: 0.0 };
            assert_eq!(apply_noise(&img, &p, 4).unwrap(), img);
        }
    }

    #[test]
    fn full_salt_pepper_saturates() {
        let img = Image::filled(20, 20, [120, 60, 30]).unwrap();
        let p = NoiseParams {
            kind: NoiseKind::SaltPepper,
            strength: 1.0,
        };
        let o = apply_noise(&img, &p, 1).unwrap();
        assert!(o.data().iter().all(|v| *v == 0 || *v == 255));
        let p = NoiseParams {
            kind: NoiseKind::SaltPepper,
            strength: 0.25,
        };
        let o = apply_noise(&img, &p, 1).unwrap();
        let hit = o.data().chunks(3).filter(|px| px[0] == 0 || px[0] == 255).count();
        assert_eq!(hit, 100);
    }

    #[test]
    fn gaussian_mean_is_unbiased() {
        let img = Image::filled(100, 100, [128, 128, 128]).unwrap();
        let p = NoiseParams {
            kind: NoiseKind::Gaussian,
            strength: 10.0,
        };
        let o = apply_noise(&img, &p, 77).unwrap();
        let n = o.data().len() as f64;
        let mean = o.data().iter().map(|v| f64::from(*v)).sum::<f64>() / n;
        assert!((mean - 128.0).abs() < 3.0 * 10.0 / n.sqrt(), "mean {mean}");
        assert_eq!(apply_noise(&img, &p, 77).unwrap(), o);
        assert_ne!(apply_noise(&img, &p, 78).unwrap(), o);
    }

    #[test]
    fn invalid_strength() {
        let img = Image::filled(2, 2, [0; 3]).unwrap();
        assert!(apply_noise(&img, &NoiseParams { kind: NoiseKind::Gaussian, strength: -1.0 }, 0).is_err());
        assert!(apply_noise(&img, &NoiseParams { kind: NoiseKind::SaltPepper, strength: 1.5 }, 0).is_err());
    }
}
