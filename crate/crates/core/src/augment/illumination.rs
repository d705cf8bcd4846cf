//! Multiplicative illumination gradients.

use serde::{Deserialize, Serialize};

use super::photometric::{from_f64, to_f64};
use crate::error::{Error, Result};
use crate::raster::Image;

pub const MAX_STRENGTH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IlluminationKind {
    /// Linear ramp along `angle_deg`, darkest (`1 - s`) at one end.
    Axial { angle_deg: f64 },
    /// Ramp in distance from `center` (fractions of width/height), normalized
    /// by the farthest corner. `bright_center` puts the `1 + s` gain at the centre.
    Radial { center: [f64; 2], bright_center: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlluminationParams {
    pub kind: IlluminationKind,
    pub strength: f64,
}

impl IlluminationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.strength >= 0.0 && self.strength <= MAX_STRENGTH) {
            return Err(Error::param(format!(
                "illumination strength {} outside [0, {MAX_STRENGTH}]",
                self.strength
            )));
        }
        match self.kind {
            IlluminationKind::Axial { angle_deg } if angle_deg.is_finite() => Ok(()),
            IlluminationKind::Radial { center, .. } if center.iter().all(|c| c.is_finite()) => Ok(()),
            _ => Err(Error::param("illumination geometry must be finite")),
        }
    }
}

/// Gain per pixel, every value within `[1 - s, 1 + s]`.
pub fn illumination_map(width: usize, height: usize, p: &IlluminationParams) -> Vec<f64> {
    let s = p.strength;
    let coords = (0..height).flat_map(|y| (0..width).map(move |x| (x as f64, y as f64)));
    match p.kind {
        IlluminationKind::Axial { angle_deg } => {
            let (dy, dx) = angle_deg.to_radians().sin_cos();
            let proj: Vec<f64> = coords.map(|(x, y)| x * dx + y * dy).collect();
            let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            proj.into_iter()
                .map(|v| {
                    let t = if span > 0.0 { (v - lo) / span } else { 0.5 };
                    1.0 - s + 2.0 * s * t
                })
                .collect()
        }
        IlluminationKind::Radial {
            center,
            bright_center,
        } => {
            let cx = center[0] * (width as f64 - 1.0);
            let cy = center[1] * (height as f64 - 1.0);
            let corners = [
                (0.0, 0.0),
                (width as f64 - 1.0, 0.0),
                (0.0, height as f64 - 1.0),
                (width as f64 - 1.0, height as f64 - 1.0),
            ];
            let rmax = corners
                .iter()
                .map(|(x, y)| (x - cx).hypot(y - cy))
                .fold(0.0, f64::max);
            coords
                .map(|(x, y)| {
                    let t = if rmax > 0.0 {
                        ((x - cx).hypot(y - cy) / rmax).min(1.0)
                    } else {
                        0.0
                    };
                    if bright_center {
                        1.0 + s - 2.0 * s * t
                    } else {
                        1.0 - s + 2.0 * s * t
                    }
                })
                .collect()
        }
    }
}

pub fn apply_illumination(image: &Image, p: &IlluminationParams) -> Result<Image> {
    p.validate()?;
    if p.strength == 0.0 {
        return Ok(image.clone());
    }
    let (w, h) = image.dims();
    let gain = illumination_map(w, h, p);
    let mut v = to_f64(image);
    for (i, x) in v.iter_mut().enumerate() {
        *x *= gain[i / 3];
    }
    Ok(from_f64(w, h, &v))
}
