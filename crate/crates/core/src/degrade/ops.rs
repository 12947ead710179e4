use ::image::codecs::jpeg::JpegEncoder;
use ::image::{ExtendedColorType, ImageFormat};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Identity of the pinned JPEG codec; golden files are only valid against it.
pub const JPEG_ENCODER_ID: &str = "image-rs 0.25 baseline JPEG encoder / zune-jpeg 0.5 decoder";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
}

impl NoiseSpec {
    pub const RANGE: (f64, f64) = (4e-3, 1e-2);

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = Self::RANGE;
        if !(self.sigma >= lo && self.sigma <= hi) {
            return Err(Error::param(format!("noise sigma must lie in [{lo}, {hi}], got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JpegSpec {
    pub quality: u8,
}

impl JpegSpec {
    pub const RANGE: (u8, u8) = (30, 95);

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = Self::RANGE;
        if self.quality < lo || self.quality > hi {
            return Err(Error::param(format!("jpeg quality must lie in [{lo}, {hi}], got {}", self.quality)));
        }
        Ok(())
    }
}

/// Adds i.i.d. zero-mean Gaussian noise to every sample, then clamps.
pub fn add_gaussian_noise(img: &Image, spec: NoiseSpec, rng: &mut SeededRng) -> Result<Image> {
    spec.validate()?;
    let normal = Normal::new(0.0, spec.sigma).map_err(|e| Error::param(e.to_string()))?;
    let data = img.data().iter().map(|v| v + normal.sample(rng)).collect();
    Image::from_clamped(img.height(), img.width(), img.channels(), data)
}

/// Baseline JPEG round trip through the 8-bit quantization of the image.
pub fn jpeg_compress(img: &Image, spec: JpegSpec) -> Result<Image> {
    spec.validate()?;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let color = if img.channels() == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    let mut encoded = Vec::new();
    JpegEncoder::new_with_quality(&mut encoded, spec.quality)
        .encode(&img.to_u8(), w, h, color)
        .map_err(|e| Error::Codec(format!("jpeg encode: {e}")))?;
    let decoded = ::image::load_from_memory_with_format(&encoded, ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(format!("jpeg decode: {e}")))?;
    let bytes = if img.channels() == 1 {
        decoded.to_luma8().into_raw()
    } else {
        decoded.to_rgb8().into_raw()
    };
    Image::from_u8(img.height(), img.width(), img.channels(), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn textured(side: usize) -> Image {
        Image::from_fn(side, side, 3, |y, x, c| {
            let (fx, fy) = (x as f64, y as f64);
            0.5 + 0.25 * (fx * 0.31 + c as f64).sin() * (fy * 0.17).cos() + 0.2 * ((fx * fy) * 0.013).sin()
        })
        .unwrap()
    }

    #[test]
    fn noise_has_requested_spread() {
        let img = Image::constant(384, 384, 1, 0.5).unwrap();
        let out = add_gaussian_noise(&img, NoiseSpec { sigma: 4e-3 }, &mut seeded(9)).unwrap();
        let n = out.data().len() as f64;
        let diffs: Vec<f64> = out.data().iter().map(|v| v - 0.5).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 4e-3).abs() <= 0.1 * 4e-3, "sd = {sd}");
    }

    #[test]
    fn noise_is_seeded_and_clamped() {
        let img = Image::constant(32, 32, 3, 0.0).unwrap();
        let a = add_gaussian_noise(&img, NoiseSpec { sigma: 1e-2 }, &mut seeded(1)).unwrap();
        let b = add_gaussian_noise(&img, NoiseSpec { sigma: 1e-2 }, &mut seeded(1)).unwrap();
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
        assert!(a.data().iter().all(|v| *v >= 0.0));
        assert!(add_gaussian_noise(&img, NoiseSpec { sigma: 0.5 }, &mut seeded(1)).is_err());
    }

    #[test]
    fn higher_quality_means_higher_psnr() {
        let img = textured(96);
        let hi = jpeg_compress(&img, JpegSpec { quality: 95 }).unwrap();
        let lo = jpeg_compress(&img, JpegSpec { quality: 30 }).unwrap();
        assert!(hi.psnr(&img) > lo.psnr(&img));
    }

    #[test]
    fn constant_images_survive_compression() {
        for q in [30, 60, 95] {
            for channels in [1, 3] {
                let img = Image::constant(24, 40, channels, 0.4).unwrap();
                let out = jpeg_compress(&img, JpegSpec { quality: q }).unwrap();
                assert!(out.max_abs_diff(&img) <= 1.0 / 255.0 + 1e-12, "q={q} c={channels}");
            }
        }
    }

    #[test]
    fn compression_is_deterministic() {
        let img = textured(64);
        let a = jpeg_compress(&img, JpegSpec { quality: 55 }).unwrap();
        let b = jpeg_compress(&img, JpegSpec { quality: 55 }).unwrap();
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
        assert!(jpeg_compress(&img, JpegSpec { quality: 20 }).is_err());
    }
}
