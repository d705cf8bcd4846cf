//! Planted-disk dermoscopy stand-ins with exact ground truth, for smoke tests
//! and demos without the challenge data.

use std::path::Path;

use rand::Rng;

use crate::dataset::{AttributeKind, DatasetRecord, Manifest};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Image};
use crate::rasterio::{write_image, write_mask};
use crate::rng::rng_for;

/// One synthetic case: skin background, a dark disk lesion and, on some
/// cases, globule dots inside the lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskCase {
    pub image: Image,
    pub lesion: BinaryMask,
    /// `None` when the case carries no globules.
    pub globules: Option<BinaryMask>,
}

/// Deterministic in `(seed, case_id)`. The disk radius lies between 20% and
/// 35% of the shorter side and the disk stays fully inside the frame.
pub fn disk_case(seed: u64, case_id: &str, width: usize, height: usize) -> Result<DiskCase> {
    if width < 32 || height < 32 {
        return Err(Error::param(format!("synthetic cases need at least 32x32, got {width}x{height}")));
    }
    let mut rng = rng_for(seed, "synthetic", case_id);
    let short = width.min(height) as f64;
    let r = rng.random_range(0.20..0.35) * short;
    let cx = rng.random_range(r + 2.0..width as f64 - r - 2.0);
    let cy = rng.random_range(r + 2.0..height as f64 - r - 2.0);
    let skin = [rng.random_range(190..230u8), rng.random_range(140..170u8), rng.random_range(120..150u8)];
    let tone = [rng.random_range(70..110u8), rng.random_range(40..60u8), rng.random_range(30..50u8)];
    let inside = |x: usize, y: usize| (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) <= r * r;

    let dots: Vec<(f64, f64)> = if rng.random_bool(0.5) {
        (0..rng.random_range(3..7))
            .map(|_| {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let d = rng.random_range(0.0..0.6) * r;
                (cx + d * a.cos(), cy + d * a.sin())
            })
            .collect()
    } else {
        Vec::new()
    };
    let dot_r = (r * 0.12).max(1.5);
    let on_dot = |x: usize, y: usize| {
        dots.iter()
            .any(|(dx, dy)| (x as f64 + 0.5 - dx).powi(2) + (y as f64 + 0.5 - dy).powi(2) <= dot_r * dot_r)
    };

    let mut noise = rng_for(seed, "synthetic-texture", case_id);
    let image = Image::from_fn(width, height, |x, y| {
        let base = if on_dot(x, y) && inside(x, y) {
            [40, 25, 20]
        } else if inside(x, y) {
            tone
        } else {
            skin
        };
        let j: i16 = noise.random_range(-6..=6);
        base.map(|c| (i16::from(c) + j).clamp(0, 255) as u8)
    })?;
    let lesion = BinaryMask::from_fn(width, height, inside)?;
    let globules = if dots.is_empty() {
        None
    } else {
        Some(BinaryMask::from_fn(width, height, |x, y| inside(x, y) && on_dot(x, y))?)
    };
    Ok(DiskCase { image, lesion, globules })
}

/// Writes `n` cases named `case000`, `case001`, ... under `dir` as
/// `images/<id>.png`, `masks/<id>.png` and `masks/<id>_globules.png`, plus
/// `manifest.jsonl` with relative paths.
pub fn write_disk_dataset(dir: &Path, n: usize, seed: u64, width: usize, height: usize) -> Result<Manifest> {
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("case{i:03}");
        let case = disk_case(seed, &id, width, height)?;
        let mut rec = DatasetRecord::new(id.clone(), format!("images/{id}.png"));
        write_image(&case.image, dir.join(&rec.image_path))?;
        let lesion = format!("masks/{id}.png");
        write_mask(&case.lesion, dir.join(&lesion))?;
        rec.lesion_gt_path = Some(lesion.into());
        if let Some(g) = &case.globules {
            let p = format!("masks/{id}_globules.png");
            write_mask(g, dir.join(&p))?;
            *rec.attribute_gt_paths.get_mut(AttributeKind::Globules) = Some(p.into());
            *rec.attribute_present.get_mut(AttributeKind::Globules) = true;
        }
        records.push(rec);
    }
    let m = Manifest::new(records, seed)?.with_base_dir(dir);
    m.write(dir.join("manifest.jsonl"))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_consistent() {
        let a = disk_case(3, "x", 96, 64).unwrap();
        assert_eq!(a, disk_case(3, "x", 96, 64).unwrap());
        assert_ne!(a, disk_case(4, "x", 96, 64).unwrap());
        let area = a.lesion.count_ones() as f64 / (96.0 * 64.0);
        assert!(area > 0.05 && area < 0.5, "{area}");
        // disk never touches the border, so the border colour is pure skin
        for x in 0..96 {
            assert!(!a.lesion.get(x, 0) && !a.lesion.get(x, 63));
        }
        if let Some(g) = &a.globules {
            assert!(g.is_subset_of(&a.lesion));
        }
    }

    #[test]
    fn some_cases_have_globules() {
        let with = (0..20)
            .filter(|i| disk_case(1, &i.to_string(), 64, 64).unwrap().globules.is_some())
            .count();
        assert!(with > 0 && with < 20);
    }
}
