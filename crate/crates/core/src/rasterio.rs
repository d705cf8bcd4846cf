//! PNG encodings of the pipeline rasters.
//!
//! Masks are 8-bit single-channel PNGs holding `{0, 255}`. Probability maps are
//! 16-bit single-channel PNGs, `v` stored as `round(v * 65535)`.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Image, ProbMap};
use crate::scalar::Real;

pub const PROB_SCALE: f64 = 65535.0;

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

fn encode_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Reads any supported colour image (PNG or JPEG) as 8-bit RGB.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let rgb = decode(path)?.into_rgb8();
    let (w, h) = rgb.dimensions();
    Image::new(w as usize, h as usize, rgb.into_raw())
}

pub fn write_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(
        image.width() as u32,
        image.height() as u32,
        image.data().to_vec(),
    )
    .expect("image buffer length is an Image invariant");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| encode_err(path, e))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let luma = match decode(path)? {
        DynamicImage::ImageLuma8(buf) => buf,
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("expected 8-bit grayscale mask, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = luma.dimensions();
    let mut data = luma.into_raw();
    for (i, v) in data.iter_mut().enumerate() {
        *v = match *v {
            0 => 0,
            255 => 1,
            other => {
                return Err(Error::InvalidValue(format!(
                    "{}: mask pixel {i} has value {other}, expected 0 or 255",
                    path.display()
                )))
            }
        };
    }
    BinaryMask::new(w as usize, h as usize, data)
}

pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u8> = mask.data().iter().map(|v| v * 255).collect();
    let buf: ImageBuffer<Luma<u8>, _> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, data)
            .expect("mask buffer length is a BinaryMask invariant");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| encode_err(path, e))
}

pub fn quantize<T: Real>(v: T) -> u16 {
    (v.as_f64() * PROB_SCALE).round().clamp(0.0, PROB_SCALE) as u16
}

pub fn dequantize<T: Real>(q: u16) -> T {
    T::of(f64::from(q) / PROB_SCALE)
}

/// Passes a map through the 16-bit file quantization without touching disk.
pub fn quantize_map<T: Real>(map: &ProbMap<T>) -> ProbMap<T> {
    let data = map
        .data()
        .iter()
        .map(|v| dequantize::<T>(quantize(*v)).min(T::one()))
        .collect();
    ProbMap::from_raw(map.width(), map.height(), data)
}

pub fn read_probmap<T: Real>(path: impl AsRef<Path>) -> Result<ProbMap<T>> {
    let path = path.as_ref();
    let luma = match decode(path)? {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!(
                    "expected 16-bit grayscale probability map, found {:?}",
                    other.color()
                ),
            })
        }
    };
    let (w, h) = luma.dimensions();
    let data = luma
        .into_raw()
        .into_iter()
        .map(|q| dequantize::<T>(q).min(T::one()))
        .collect();
    ProbMap::new(w as usize, h as usize, data)
}

pub fn write_probmap<T: Real>(map: &ProbMap<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u16> = map.data().iter().map(|v| quantize(*v)).collect();
    let buf: ImageBuffer<Luma<u16>, _> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, data)
            .expect("map buffer length is a ProbMap invariant");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| encode_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_255_mask_reads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        ImageBuffer::<Luma<u8>, _>::from_raw(3, 2, vec![255u8; 6])
            .unwrap()
            .save(&p)
            .unwrap();
        assert_eq!(read_mask(&p).unwrap(), BinaryMask::ones(3, 2).unwrap());
    }

    #[test]
    fn non_binary_mask_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        ImageBuffer::<Luma<u8>, _>::from_raw(2, 1, vec![0u8, 128])
            .unwrap()
            .save(&p)
            .unwrap();
        assert!(matches!(read_mask(&p), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn wrong_depth_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        ImageBuffer::<Luma<u8>, _>::from_raw(2, 1, vec![0u8, 255])
            .unwrap()
            .save(&p)
            .unwrap();
        assert!(matches!(read_probmap::<f32>(&p), Err(Error::Format { .. })));
        assert!(matches!(
            read_mask(dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn probmap_decoding_is_linear() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.png");
        ImageBuffer::<Luma<u16>, _>::from_raw(1, 1, vec![32768u16])
            .unwrap()
            .save(&p)
            .unwrap();
        let m: ProbMap<f64> = read_probmap(&p).unwrap();
        assert!((m.data()[0] - 32768.0 / 65535.0).abs() < 1e-15);
        assert!((m.data()[0] - 0.50001).abs() < 1e-5);
    }

    #[test]
    fn mask_and_bound_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let zeros = BinaryMask::zeros(4, 3).unwrap();
        write_mask(&zeros, dir.path().join("z.png")).unwrap();
        assert_eq!(read_mask(dir.path().join("z.png")).unwrap(), zeros);
        let ones = ProbMap::<f32>::filled(4, 3, 1.0).unwrap();
        write_probmap(&ones, dir.path().join("o.png")).unwrap();
        assert_eq!(read_probmap::<f32>(dir.path().join("o.png")).unwrap(), ones);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn probmap_round_trip_within_half_step(values in prop::collection::vec(0.0f64..=1.0, 1..200)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.png");
            let n = values.len();
            let map = ProbMap::new(n, 1, values).unwrap();
            write_probmap(&map, &p).unwrap();
            let back: ProbMap<f64> = read_probmap(&p).unwrap();
            for (a, b) in map.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 131070.0 + 1e-15);
            }
        }

        #[test]
        fn mask_round_trip_is_exact(bits in prop::collection::vec(0u8..=1, 1..200)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.png");
            let mask = BinaryMask::new(bits.len(), 1, bits).unwrap();
            write_mask(&mask, &p).unwrap();
            prop_assert_eq!(read_mask(&p).unwrap(), mask);
        }
    }
}
