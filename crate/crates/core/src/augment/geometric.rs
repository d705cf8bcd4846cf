//! Flips and the composed rotation/zoom/shear/translation warp.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Image, Permutation};

pub const MAX_ROTATION_DEG: f64 = 40.0;
pub const ZOOM_RANGE: (f64, f64) = (0.7, 1.3);
pub const MAX_SHEAR: f64 = 0.3;
pub const MAX_TRANSLATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometricParams {
    pub hflip: bool,
    pub vflip: bool,
    pub rotation_deg: f64,
    pub zoom: f64,
    /// Shift as a fraction of `(width, height)`.
    pub translate: (f64, f64),
    pub shear: f64,
}

impl Default for GeometricParams {
    fn default() -> Self {
        Self {
            hflip: false,
            vflip: false,
            rotation_deg: 0.0,
            zoom: 1.0,
            translate: (0.0, 0.0),
            shear: 0.0,
        }
    }
}

impl GeometricParams {
    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo && v <= hi;
        if !in_range(self.rotation_deg, 0.0, MAX_ROTATION_DEG) {
            return Err(Error::param(format!(
                "rotation {} deg outside [0, {MAX_ROTATION_DEG}]",
                self.rotation_deg
            )));
        }
        if !in_range(self.zoom, ZOOM_RANGE.0, ZOOM_RANGE.1) {
            return Err(Error::param(format!(
                "zoom {} outside [{}, {}]",
                self.zoom, ZOOM_RANGE.0, ZOOM_RANGE.1
            )));
        }
        if !in_range(self.shear, -MAX_SHEAR, MAX_SHEAR) {
            return Err(Error::param(format!(
                "shear {} outside [-{MAX_SHEAR}, {MAX_SHEAR}]",
                self.shear
            )));
        }
        let (dx, dy) = self.translate;
        if !in_range(dx, -MAX_TRANSLATE, MAX_TRANSLATE) || !in_range(dy, -MAX_TRANSLATE, MAX_TRANSLATE) {
            return Err(Error::param(format!(
                "translation ({dx}, {dy}) outside +/-{MAX_TRANSLATE}"
            )));
        }
        Ok(())
    }

    pub fn affine(&self, width: usize, height: usize) -> Affine {
        Affine::compose(width, height, self.rotation_deg, self.zoom, self.shear, self.translate)
    }
}

/// Forward 2-D affine map in pixel-centre coordinates: `p' = A p + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        a: [[1.0, 0.0], [0.0, 1.0]],
        b: [0.0, 0.0],
    };

    /// Rotation, shear and zoom about the raster centre, followed by a shift.
    pub fn compose(
        width: usize,
        height: usize,
        rotation_deg: f64,
        zoom: f64,
        shear: f64,
        translate: (f64, f64),
    ) -> Affine {
        let (s, c) = rotation_deg.to_radians().sin_cos();
        let rot = [[c, -s], [s, c]];
        // x-shear, then uniform zoom
        let shz = [[zoom, shear * zoom], [0.0, zoom]];
        let a = mat_mul(rot, shz);
        let center = [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0];
        let shift = [translate.0 * width as f64, translate.1 * height as f64];
        let ac = mat_vec(a, center);
        Affine {
            a,
            b: [
                center[0] + shift[0] - ac[0],
                center[1] + shift[1] - ac[1],
            ],
        }
    }

    pub fn rotation(width: usize, height: usize, deg: f64) -> Affine {
        Self::compose(width, height, deg, 1.0, 0.0, (0.0, 0.0))
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn inverse(&self) -> Affine {
        let [[a, b], [c, d]] = self.a;
        let det = a * d - b * c;
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let t = mat_vec(inv, self.b);
        Affine {
            a: inv,
            b: [-t[0], -t[1]],
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let q = mat_vec(self.a, p);
        [q[0] + self.b[0], q[1] + self.b[1]]
    }
}

fn mat_mul(x: [[f64; 2]; 2], y: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            x[0][0] * y[0][0] + x[0][1] * y[1][0],
            x[0][0] * y[0][1] + x[0][1] * y[1][1],
        ],
        [
            x[1][0] * y[0][0] + x[1][1] * y[1][0],
            x[1][0] * y[0][1] + x[1][1] * y[1][1],
        ],
    ]
}

fn mat_vec(m: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// Folds a continuous coordinate into `[0, n - 1]` by mirroring about the edge pixels.
pub(crate) fn reflect(u: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    let period = 2.0 * last;
    let mut r = u.rem_euclid(period);
    if r > last {
        r = period - r;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Resamples `image` so that output pixel `q` takes the value at `transform^-1(q)`.
/// Samples that fall off the canvas are reflected back onto it.
pub fn warp_image(image: &Image, transform: &Affine, interp: Interpolation) -> Image {
    if transform.is_identity() {
        return image.clone();
    }
    let (w, h) = image.dims();
    let inv = transform.inverse();
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            let [u, v] = inv.apply([x as f64, y as f64]);
            let (u, v) = (reflect(u, w), reflect(v, h));
            match interp {
                Interpolation::Nearest => {
                    let (sx, sy) = (nearest(u, w), nearest(v, h));
                    out.extend_from_slice(&src[(sy * w + sx) * 3..(sy * w + sx) * 3 + 3]);
                }
                Interpolation::Bilinear => {
                    let x0 = u.floor() as usize;
                    let y0 = v.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let y1 = (y0 + 1).min(h - 1);
                    let fx = u - x0 as f64;
                    let fy = v - y0 as f64;
                    for c in 0..3 {
                        let at = |xx: usize, yy: usize| f64::from(src[(yy * w + xx) * 3 + c]);
                        let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
                        let bot = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
                        out.push((top + (bot - top) * fy).round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
        }
    }
    Image::new(w, h, out).expect("warp preserves dimensions")
}

fn nearest(u: f64, n: usize) -> usize {
    (u.round() as usize).min(n - 1)
}

/// Nearest-neighbour warp; the result stays binary.
pub fn warp_mask(mask: &BinaryMask, transform: &Affine) -> BinaryMask {
    if transform.is_identity() {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let inv = transform.inverse();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let [u, v] = inv.apply([x as f64, y as f64]);
            let (sx, sy) = (nearest(reflect(u, w), w), nearest(reflect(v, h), h));
            out.push(mask.data()[sy * w + sx]);
        }
    }
    BinaryMask::from_raw(w, h, out)
}

/// Applies the same spatial transform to an image (bilinear) and its mask (nearest).
pub fn apply_geometric(
    image: &Image,
    mask: Option<&BinaryMask>,
    p: &GeometricParams,
) -> Result<(Image, Option<BinaryMask>)> {
    p.validate()?;
    if let Some(m) = mask {
        crate::raster::ensure_same_dims(image.dims(), m.dims())?;
    }
    let mut img = image.clone();
    let mut msk = mask.cloned();
    for (on, perm) in [
        (p.hflip, Permutation::FlipHorizontal),
        (p.vflip, Permutation::FlipVertical),
    ] {
        if on {
            img = img.permute(perm);
            msk = msk.map(|m| m.permute(perm));
        }
    }
    let t = p.affine(img.width(), img.height());
    let img = warp_image(&img, &t, Interpolation::Bilinear);
    let msk = msk.map(|m| warp_mask(&m, &t));
    Ok((img, msk))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let fx = x as f64 / w as f64;
            let fy = y as f64 / h as f64;
            let v = 128.0 + 60.0 * (fx * 3.0).sin() + 50.0 * (fy * 2.5).cos();
            [v as u8, (v * 0.8) as u8, (255.0 - v) as u8]
        })
        .unwrap()
    }

    #[test]
    fn identity_params_are_exact() {
        let img = smooth(17, 11);
        let mask = BinaryMask::from_fn(17, 11, |x, y| x > y).unwrap();
        let (i, m) = apply_geometric(&img, Some(&mask), &GeometricParams::default()).unwrap();
        assert_eq!(i, img);
        assert_eq!(m.unwrap(), mask);
    }

    #[test]
    fn hflip_swaps_columns_and_is_involutive() {
        let img = Image::new(2, 2, vec![1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4]).unwrap();
        let p = GeometricParams {
            hflip: true,
            ..Default::default()
        };
        let (once, _) = apply_geometric(&img, None, &p).unwrap();
        assert_eq!(once.data(), &[2, 2, 2, 1, 1, 1, 4, 4, 4, 3, 3, 3]);
        let (twice, _) = apply_geometric(&once, None, &p).unwrap();
        assert_eq!(twice, img);
        let v = GeometricParams {
            vflip: true,
            ..Default::default()
        };
        let (vv, _) = apply_geometric(&apply_geometric(&img, None, &v).unwrap().0, None, &v).unwrap();
        assert_eq!(vv, img);
    }

    #[test]
    fn out_of_range_params_are_rejected() {
        let bad = [
            GeometricParams { rotation_deg: 41.0, ..Default::default() },
            GeometricParams { rotation_deg: -1.0, ..Default::default() },
            GeometricParams { zoom: 1.31, ..Default::default() },
            GeometricParams { shear: -0.31, ..Default::default() },
            GeometricParams { translate: (0.6, 0.0), ..Default::default() },
            GeometricParams { zoom: f64::NAN, ..Default::default() },
        ];
        let img = smooth(4, 4);
        for p in bad {
            assert!(matches!(apply_geometric(&img, None, &p), Err(Error::Parameter(_))), "{p:?}");
        }
    }

    #[test]
    fn rotation_round_trip_is_close() {
        let img = smooth(64, 48);
        let fwd = Affine::rotation(64, 48, 25.0);
        let back = Affine::rotation(64, 48, -25.0);
        let r = warp_image(&warp_image(&img, &fwd, Interpolation::Bilinear), &back, Interpolation::Bilinear);
        // pixels within the inscribed circle never leave the canvas
        let (cx, cy, rad) = (31.5, 23.5, 23.0);
        let mut err = 0.0;
        let mut n = 0.0;
        for y in 0..48 {
            for x in 0..64 {
                if ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() <= rad {
                    for c in 0..3 {
                        err += (f64::from(img.pixel(x, y)[c]) - f64::from(r.pixel(x, y)[c])).abs();
                        n += 1.0;
                    }
                }
            }
        }
        assert!(err / n < 2.0, "mean abs error {}", err / n);
    }

    #[test]
    fn mask_and_image_share_the_coordinate_map() {
        let mask = BinaryMask::from_fn(40, 30, |x, y| (x as i32 - 18).pow(2) + (y as i32 - 14).pow(2) < 80).unwrap();
        let indicator = Image::from_fn(40, 30, |x, y| if mask.get(x, y) { [255; 3] } else { [0; 3] }).unwrap();
        let p = GeometricParams {
            hflip: true,
            rotation_deg: 30.0,
            zoom: 1.2,
            shear: 0.2,
            translate: (0.1, -0.05),
            ..Default::default()
        };
        let (_, m) = apply_geometric(&indicator, Some(&mask), &p).unwrap();
        let m = m.unwrap();
        assert!(m.data().iter().all(|v| *v <= 1));
        let flipped = indicator.permute(Permutation::FlipHorizontal);
        let nearest = warp_image(&flipped, &p.affine(40, 30), Interpolation::Nearest);
        for y in 0..30 {
            for x in 0..40 {
                assert_eq!(nearest.pixel(x, y)[0] == 255, m.get(x, y));
            }
        }
    }

    #[test]
    fn affine_inverse() {
        let t = Affine::compose(10, 8, 33.0, 0.8, -0.2, (0.1, 0.2));
        let p = [3.25, 7.5];
        let q = t.inverse().apply(t.apply(p));
        assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        assert_eq!(reflect(-1.0, 5), 1.0);
        assert_eq!(reflect(5.0, 5), 3.0);
        assert_eq!(reflect(9.0, 5), 1.0);
        assert_eq!(reflect(3.0, 1), 0.0);
    }
}
