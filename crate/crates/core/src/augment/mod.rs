//! Joint image/mask augmentation with seeded, replayable parameter plans.
//!
//! [`sample_augmentation`] draws an [`AugmentationPlan`] from an
//! [`AugmentConfig`]; [`apply_plan`] replays it. Each routine draws from its
//! own seed-derived stream, so enabling or retuning one routine never shifts
//! the draws of another.

mod geometric;
mod hair;
mod illumination;
mod noise;
mod photometric;

pub use geometric::{
    apply_geometric, warp_image, warp_mask, Affine, GeometricParams, Interpolation,
    MAX_ROTATION_DEG, MAX_SHEAR, ZOOM_RANGE,
};
pub use hair::{render_hair_coverage, simulate_hair, HairParams, HairTone};
pub use illumination::{apply_illumination, illumination_map, IlluminationKind, IlluminationParams};
pub use noise::{apply_noise, NoiseKind, NoiseParams};
pub use photometric::{apply_photometric, Contrast, PhotometricParams, Sharpness};

pub(crate) use photometric::gaussian_blur;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Image};
use crate::rng::{rng_for, PipelineRng};

/// On/off switch with a per-sample firing probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggle {
    pub enabled: bool,
    pub probability: f64,
}

impl Default for Toggle {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
        }
    }
}

/// A routine whose strength is drawn uniformly from `range`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangedToggle {
    pub enabled: bool,
    pub probability: f64,
    pub range: (f64, f64),
}

impl RangedToggle {
    fn new(range: (f64, f64)) -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            range,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastRoutine {
    pub enabled: bool,
    pub probability: f64,
    /// Signed blend strength range.
    pub range: (f64, f64),
    pub low_percentile: f64,
    pub high_percentile: f64,
}

impl Default for ContrastRoutine {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            range: (-0.5, 0.5),
            low_percentile: 2.0,
            high_percentile: 98.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpnessRoutine {
    pub enabled: bool,
    pub probability: f64,
    /// Chance of sharpening rather than blurring once the routine fires.
    pub sharpen_probability: f64,
    pub blur_sigma: (f64, f64),
    pub unsharp_amount: (f64, f64),
    pub unsharp_sigma: f64,
}

impl Default for SharpnessRoutine {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            sharpen_probability: 0.5,
            blur_sigma: (0.5, 2.0),
            unsharp_amount: (0.3, 1.5),
            unsharp_sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseRoutine {
    pub enabled: bool,
    pub probability: f64,
    pub gaussian_sigma: (f64, f64),
    pub speckle_sigma: (f64, f64),
    pub salt_pepper_fraction: (f64, f64),
}

impl Default for NoiseRoutine {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            gaussian_sigma: (1.0, 12.0),
            speckle_sigma: (0.01, 0.1),
            salt_pepper_fraction: (0.001, 0.01),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlluminationRoutine {
    pub enabled: bool,
    pub probability: f64,
    pub strength: (f64, f64),
    pub radial_probability: f64,
}

impl Default for IlluminationRoutine {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            strength: (0.0, 0.3),
            radial_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HairRoutine {
    pub enabled: bool,
    pub probability: f64,
    pub count: (u32, u32),
    pub thickness: (f64, f64),
    pub darkness: (f64, f64),
    pub curliness: f64,
    pub length: (f64, f64),
    pub light_probability: f64,
}

impl Default for HairRoutine {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            count: (1, 10),
            thickness: (1.0, 5.0),
            darkness: (0.5, 1.0),
            curliness: 0.5,
            length: (0.2, 0.6),
            light_probability: 0.2,
        }
    }
}

/// Per-routine enable flags, firing probabilities and ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip: Toggle,
    pub vflip: Toggle,
    pub rotation: RangedToggle,
    pub zoom: RangedToggle,
    /// Fraction of each dimension; applied independently to x and y.
    pub translate: RangedToggle,
    pub shear: RangedToggle,
    pub channel_shift: RangedToggle,
    pub intensity_scale: RangedToggle,
    pub contrast: ContrastRoutine,
    pub sharpness: SharpnessRoutine,
    pub noise: NoiseRoutine,
    pub illumination: IlluminationRoutine,
    pub hair: HairRoutine,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: Toggle::default(),
            vflip: Toggle::default(),
            rotation: RangedToggle::new((0.0, MAX_ROTATION_DEG)),
            zoom: RangedToggle::new(ZOOM_RANGE),
            translate: RangedToggle::new((-0.1, 0.1)),
            shear: RangedToggle::new((-MAX_SHEAR, MAX_SHEAR)),
            channel_shift: RangedToggle::new((-20.0, 20.0)),
            intensity_scale: RangedToggle::new(photometric::INTENSITY_SCALE_RANGE),
            contrast: ContrastRoutine::default(),
            sharpness: SharpnessRoutine::default(),
            noise: NoiseRoutine::default(),
            illumination: IlluminationRoutine::default(),
            hair: HairRoutine::default(),
        }
    }
}

impl AugmentConfig {
    /// Every routine switched off; sampling then yields the identity plan.
    pub fn disabled() -> Self {
        let mut c = Self::default();
        c.hflip.enabled = false;
        c.vflip.enabled = false;
        for r in [
            &mut c.rotation,
            &mut c.zoom,
            &mut c.translate,
            &mut c.shear,
            &mut c.channel_shift,
            &mut c.intensity_scale,
        ] {
            r.enabled = false;
        }
        c.contrast.enabled = false;
        c.sharpness.enabled = false;
        c.noise.enabled = false;
        c.illumination.enabled = false;
        c.hair.enabled = false;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("hflip", self.hflip.probability),
            ("vflip", self.vflip.probability),
            ("rotation", self.rotation.probability),
            ("zoom", self.zoom.probability),
            ("translate", self.translate.probability),
            ("shear", self.shear.probability),
            ("channel_shift", self.channel_shift.probability),
            ("intensity_scale", self.intensity_scale.probability),
            ("contrast", self.contrast.probability),
            ("sharpness", self.sharpness.probability),
            ("sharpness.sharpen_probability", self.sharpness.sharpen_probability),
            ("noise", self.noise.probability),
            ("illumination", self.illumination.probability),
            ("illumination.radial_probability", self.illumination.radial_probability),
            ("hair", self.hair.probability),
            ("hair.light_probability", self.hair.light_probability),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augment.{name} probability {p} outside [0, 1]")));
            }
        }
        let ranges = [
            ("rotation", self.rotation.range, (0.0, MAX_ROTATION_DEG)),
            ("zoom", self.zoom.range, ZOOM_RANGE),
            ("translate", self.translate.range, (-geometric::MAX_TRANSLATE, geometric::MAX_TRANSLATE)),
            ("shear", self.shear.range, (-MAX_SHEAR, MAX_SHEAR)),
            ("channel_shift", self.channel_shift.range, (-255.0, 255.0)),
            ("intensity_scale", self.intensity_scale.range, photometric::INTENSITY_SCALE_RANGE),
            ("contrast", self.contrast.range, (-1.0, 1.0)),
            ("sharpness.blur_sigma", self.sharpness.blur_sigma, (0.0, 50.0)),
            ("sharpness.unsharp_amount", self.sharpness.unsharp_amount, (0.0, 10.0)),
            ("noise.gaussian_sigma", self.noise.gaussian_sigma, (0.0, 255.0)),
            ("noise.speckle_sigma", self.noise.speckle_sigma, (0.0, 10.0)),
            ("noise.salt_pepper_fraction", self.noise.salt_pepper_fraction, (0.0, 1.0)),
            ("illumination.strength", self.illumination.strength, (0.0, illumination::MAX_STRENGTH)),
            ("hair.darkness", self.hair.darkness, (0.0, 1.0)),
        ];
        for (name, (lo, hi), (min, max)) in ranges {
            if !(lo <= hi && lo >= min && hi <= max) {
                return Err(Error::Config(format!(
                    "augment.{name} range ({lo}, {hi}) must be ordered and within [{min}, {max}]"
                )));
            }
        }
        if self.hair.count.0 > self.hair.count.1 {
            return Err(Error::Config("augment.hair.count range is not ordered".into()));
        }
        Ok(())
    }
}

/// Fully resolved parameters of one augmentation draw; serializes to the
/// per-case parameter log and replays through [`apply_plan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPlan {
    pub geometric: GeometricParams,
    pub illumination: Option<IlluminationParams>,
    pub photometric: PhotometricParams,
    pub hair: Option<HairParams>,
    pub noise: Option<NoiseParams>,
    pub noise_seed: u64,
}

impl AugmentationPlan {
    pub fn identity() -> Self {
        Self {
            geometric: GeometricParams::default(),
            illumination: None,
            photometric: PhotometricParams::default(),
            hair: None,
            noise: None,
            noise_seed: 0,
        }
    }
}

fn fires(rng: &mut PipelineRng, enabled: bool, probability: f64) -> bool {
    enabled && rng.random_bool(probability)
}

fn draw(rng: &mut PipelineRng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn ranged(seed: u64, name: &str, r: &RangedToggle, neutral: f64) -> f64 {
    let mut rng = rng_for(seed, "augment", name);
    if fires(&mut rng, r.enabled, r.probability) {
        draw(&mut rng, r.range)
    } else {
        neutral
    }
}

/// Draws one plan; a pure function of `(seed, config)`.
pub fn sample_augmentation(seed: u64, config: &AugmentConfig) -> Result<AugmentationPlan> {
    config.validate()?;
    let toggle = |name: &str, t: &Toggle| {
        let mut rng = rng_for(seed, "augment", name);
        fires(&mut rng, t.enabled, t.probability)
    };

    let translate = {
        let mut rng = rng_for(seed, "augment", "translate");
        if fires(&mut rng, config.translate.enabled, config.translate.probability) {
            (draw(&mut rng, config.translate.range), draw(&mut rng, config.translate.range))
        } else {
            (0.0, 0.0)
        }
    };
    let geometric = GeometricParams {
        hflip: toggle("hflip", &config.hflip),
        vflip: toggle("vflip", &config.vflip),
        rotation_deg: ranged(seed, "rotation", &config.rotation, 0.0),
        zoom: ranged(seed, "zoom", &config.zoom, 1.0),
        translate,
        shear: ranged(seed, "shear", &config.shear, 0.0),
    };

    let channel_shift = {
        let mut rng = rng_for(seed, "augment", "channel_shift");
        let r = &config.channel_shift;
        if fires(&mut rng, r.enabled, r.probability) {
            [draw(&mut rng, r.range), draw(&mut rng, r.range), draw(&mut rng, r.range)]
        } else {
            [0.0; 3]
        }
    };
    let contrast = {
        let c = &config.contrast;
        let mut rng = rng_for(seed, "augment", "contrast");
        Contrast {
            delta: if fires(&mut rng, c.enabled, c.probability) {
                draw(&mut rng, c.range)
            } else {
                0.0
            },
            low_percentile: c.low_percentile,
            high_percentile: c.high_percentile,
        }
    };
    let sharpness = {
        let s = &config.sharpness;
        let mut rng = rng_for(seed, "augment", "sharpness");
        if fires(&mut rng, s.enabled, s.probability) {
            if rng.random_bool(s.sharpen_probability) {
                Sharpness::Unsharp {
                    amount: draw(&mut rng, s.unsharp_amount),
                    sigma: s.unsharp_sigma,
                }
            } else {
                Sharpness::Blur {
                    sigma: draw(&mut rng, s.blur_sigma),
                }
            }
        } else {
            Sharpness::None
        }
    };
    let photometric = PhotometricParams {
        channel_shift,
        intensity_scale: ranged(seed, "intensity_scale", &config.intensity_scale, 1.0),
        contrast,
        sharpness,
    };

    let (noise, noise_seed) = {
        let n = &config.noise;
        let mut rng = rng_for(seed, "augment", "noise");
        if fires(&mut rng, n.enabled, n.probability) {
            let (kind, range) = match rng.random_range(0..3) {
                0 => (NoiseKind::Gaussian, n.gaussian_sigma),
                1 => (NoiseKind::Speckle, n.speckle_sigma),
                _ => (NoiseKind::SaltPepper, n.salt_pepper_fraction),
            };
            let strength = draw(&mut rng, range);
            (Some(NoiseParams { kind, strength }), rng.random())
        } else {
            (None, 0)
        }
    };

    let illumination = {
        let il = &config.illumination;
        let mut rng = rng_for(seed, "augment", "illumination");
        if fires(&mut rng, il.enabled, il.probability) {
            let strength = draw(&mut rng, il.strength);
            let kind = if rng.random_bool(il.radial_probability) {
                IlluminationKind::Radial {
                    center: [rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)],
                    bright_center: rng.random(),
                }
            } else {
                IlluminationKind::Axial {
                    angle_deg: rng.random_range(0.0..360.0),
                }
            };
            Some(IlluminationParams { kind, strength })
        } else {
            None
        }
    };

    let hair = {
        let hr = &config.hair;
        let mut rng = rng_for(seed, "augment", "hair");
        if fires(&mut rng, hr.enabled, hr.probability) {
            Some(HairParams {
                count: rng.random_range(hr.count.0..=hr.count.1),
                thickness: hr.thickness,
                darkness: draw(&mut rng, hr.darkness),
                tone: if rng.random_bool(hr.light_probability) {
                    HairTone::Light
                } else {
                    HairTone::Dark
                },
                curliness: hr.curliness,
                length: hr.length,
                seed: rng.random(),
            })
        } else {
            None
        }
    };

    Ok(AugmentationPlan {
        geometric,
        illumination,
        photometric,
        hair,
        noise,
        noise_seed,
    })
}

/// Geometry first (image and mask), then illumination, photometric changes,
/// hair and noise on the image only.
pub fn apply_plan(
    image: &Image,
    mask: Option<&BinaryMask>,
    plan: &AugmentationPlan,
) -> Result<(Image, Option<BinaryMask>)> {
    let (mut img, mask) = apply_geometric(image, mask, &plan.geometric)?;
    if let Some(il) = &plan.illumination {
        img = apply_illumination(&img, il)?;
    }
    img = apply_photometric(&img, &plan.photometric)?;
    if let Some(h) = &plan.hair {
        img = simulate_hair(&img, h)?;
    }
    if let Some(n) = &plan.noise {
        img = apply_noise(&img, n, plan.noise_seed)?;
    }
    Ok((img, mask))
}
