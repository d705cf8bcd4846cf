//! Synthetic hair occlusion: random Catmull-Rom strokes composited over the image.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::photometric::{from_f64, to_f64};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::rng::PipelineRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HairTone {
    Dark,
    Light,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HairParams {
    pub count: u32,
    /// Stroke width range in pixels.
    pub thickness: (f64, f64),
    /// Blend strength in `[0, 1]`; 1 paints fully black (dark) or white (light) hair.
    pub darkness: f64,
    pub tone: HairTone,
    /// Maximum heading change between control points, in radians.
    pub curliness: f64,
    /// Hair length range as a fraction of the image diagonal.
    pub length: (f64, f64),
    pub seed: u64,
}

impl Default for HairParams {
    fn default() -> Self {
        Self {
            count: 0,
            thickness: (1.0, 5.0),
            darkness: 0.8,
            tone: HairTone::Dark,
            curliness: 0.5,
            length: (0.2, 0.6),
            seed: 0,
        }
    }
}

impl HairParams {
    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.thickness;
        if !(t0 > 0.0 && t0 <= t1 && t1.is_finite()) {
            return Err(Error::param(format!("hair thickness range ({t0}, {t1}) is invalid")));
        }
        if !(0.0..=1.0).contains(&self.darkness) {
            return Err(Error::param(format!("hair darkness {} outside [0, 1]", self.darkness)));
        }
        if !(self.curliness >= 0.0 && self.curliness.is_finite()) {
            return Err(Error::param("hair curliness must be finite and >= 0"));
        }
        let (l0, l1) = self.length;
        if !(l0 > 0.0 && l0 <= l1 && l1.is_finite()) {
            return Err(Error::param(format!("hair length range ({l0}, {l1}) is invalid")));
        }
        Ok(())
    }
}

fn catmull_rom(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], t: f64) -> [f64; 2] {
    let t2 = t * t;
    let t3 = t2 * t;
    let f = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * (2.0 * b + (c - a) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (3.0 * b - a - 3.0 * c + d) * t3)
    };
    [f(p0[0], p1[0], p2[0], p3[0]), f(p0[1], p1[1], p2[1], p3[1])]
}

fn stamp(coverage: &mut [f64], width: usize, height: usize, c: [f64; 2], radius: f64) {
    let reach = radius + 1.0;
    let x0 = (c[0] - reach).floor().max(0.0) as usize;
    let y0 = (c[1] - reach).floor().max(0.0) as usize;
    let x1 = ((c[0] + reach).ceil().max(0.0) as usize).min(width.saturating_sub(1));
    let y1 = ((c[1] + reach).ceil().max(0.0) as usize).min(height.saturating_sub(1));
    if c[0] + reach < 0.0 || c[1] + reach < 0.0 {
        return;
    }
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = (x as f64 - c[0]).hypot(y as f64 - c[1]);
            let a = (radius + 0.5 - d).clamp(0.0, 1.0);
            let slot = &mut coverage[y * width + x];
            if a > *slot {
                *slot = a;
            }
        }
    }
}

/// Anti-aliased stroke coverage in `[0, 1]` for every pixel.
pub fn render_hair_coverage(width: usize, height: usize, p: &HairParams) -> Vec<f64> {
    let mut coverage = vec![0.0; width * height];
    let mut rng = PipelineRng::seed_from_u64(p.seed);
    let diag = (width as f64).hypot(height as f64);
    for _ in 0..p.count {
        let controls = rng.random_range(3..=5usize);
        let total = rng.random_range(p.length.0..=p.length.1) * diag;
        let step = total / (controls - 1) as f64;
        let radius = rng.random_range(p.thickness.0..=p.thickness.1) / 2.0;
        let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
        let mut pts = vec![[
            rng.random_range(0.0..width as f64),
            rng.random_range(0.0..height as f64),
        ]];
        for _ in 1..controls {
            if p.curliness > 0.0 {
                heading += rng.random_range(-p.curliness..=p.curliness);
            }
            let last = pts[pts.len() - 1];
            pts.push([last[0] + step * heading.cos(), last[1] + step * heading.sin()]);
        }
        let n = pts.len();
        let samples_per_segment = (step * 4.0).ceil().max(1.0) as usize;
        for seg in 0..n - 1 {
            let p0 = pts[seg.saturating_sub(1)];
            let p1 = pts[seg];
            let p2 = pts[seg + 1];
            let p3 = pts[(seg + 2).min(n - 1)];
            for k in 0..=samples_per_segment {
                let t = k as f64 / samples_per_segment as f64;
                stamp(&mut coverage, width, height, catmull_rom(p0, p1, p2, p3, t), radius);
            }
        }
    }
    coverage
}

pub fn simulate_hair(image: &Image, p: &HairParams) -> Result<Image> {
    p.validate()?;
    if p.count == 0 || p.darkness == 0.0 {
        return Ok(image.clone());
    }
    let (w, h) = image.dims();
    let coverage = render_hair_coverage(w, h, p);
    let mut v = to_f64(image);
    for (i, x) in v.iter_mut().enumerate() {
        let a = coverage[i / 3] * p.darkness;
        if a > 0.0 {
            *x = match p.tone {
                HairTone::Dark => *x * (1.0 - a),
                HairTone::Light => *x + a * (255.0 - *x),
            };
        }
    }
    Ok(from_f64(w, h, &v))
}
