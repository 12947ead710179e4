//! Separable resampling with the half-pixel coordinate convention: output
//! index `d` reads source coordinate `(d + 0.5) * in / out - 0.5`. Edges clamp.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    Nearest,
    Bilinear,
    Bicubic,
}

impl fmt::Display for ResampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResampleMethod::Nearest => "nearest",
            ResampleMethod::Bilinear => "bilinear",
            ResampleMethod::Bicubic => "bicubic",
        })
    }
}

impl FromStr for ResampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResampleMethod::Nearest),
            "bilinear" => Ok(ResampleMethod::Bilinear),
            "bicubic" => Ok(ResampleMethod::Bicubic),
            other => Err(Error::param(format!("unknown resampling method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownscaleSpec {
    pub factor: usize,
    pub method: ResampleMethod,
}

/// Keys cubic convolution weight with `a = -0.5`.
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps `(index, weight)` for every output position along one axis.
fn axis_taps(n_in: usize, n_out: usize, method: ResampleMethod) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    let last = n_in as isize - 1;
    let clamp = |i: isize| i.clamp(0, last) as usize;
    (0..n_out)
        .map(|d| {
            let src = (d as f64 + 0.5) * scale - 0.5;
            match method {
                ResampleMethod::Nearest => vec![(clamp((src - 0.5).ceil() as isize), 1.0)],
                ResampleMethod::Bilinear => {
                    let i0 = src.floor();
                    let t = src - i0;
                    let i0 = i0 as isize;
                    vec![(clamp(i0), 1.0 - t), (clamp(i0 + 1), t)]
                }
                ResampleMethod::Bicubic => {
                    let i0 = src.floor();
                    let t = src - i0;
                    let i0 = i0 as isize;
                    (-1..=2).map(|k| (clamp(i0 + k), cubic(t - k as f64))).collect()
                }
            }
        })
        .collect()
}

/// Resizes to `out_h x out_w`; results are clamped to `[0, 1]`.
pub fn resize(img: &Image, out_h: usize, out_w: usize, method: ResampleMethod) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::param("output size must be positive"));
    }
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let src = img.data();
    let xt = axis_taps(w, out_w, method);
    let yt = axis_taps(h, out_h, method);
    if method == ResampleMethod::Nearest {
        let mut data = Vec::with_capacity(out_h * out_w * ch);
        for ty in &yt {
            let row = &src[ty[0].0 * w * ch..(ty[0].0 + 1) * w * ch];
            for tx in &xt {
                data.extend_from_slice(&row[tx[0].0 * ch..(tx[0].0 + 1) * ch]);
            }
        }
        return Image::new(out_h, out_w, ch, data);
    }

    let mut horiz = vec![0.0; h * out_w * ch];
    for y in 0..h {
        let row = &src[y * w * ch..(y + 1) * w * ch];
        let out = &mut horiz[y * out_w * ch..(y + 1) * out_w * ch];
        for (x, taps) in xt.iter().enumerate() {
            for c in 0..ch {
                out[x * ch + c] = taps.iter().map(|&(i, wt)| wt * row[i * ch + c]).sum();
            }
        }
    }
    let stride = out_w * ch;
    let mut data = vec![0.0; out_h * stride];
    for (y, taps) in yt.iter().enumerate() {
        let out = &mut data[y * stride..(y + 1) * stride];
        for &(i, wt) in taps {
            let row = &horiz[i * stride..(i + 1) * stride];
            for (o, v) in out.iter_mut().zip(row) {
                *o += wt * v;
            }
        }
    }
    Image::from_clamped(out_h, out_w, ch, data)
}

pub fn downscale(img: &Image, spec: DownscaleSpec) -> Result<Image> {
    let f = spec.factor;
    if f == 0 || !img.height().is_multiple_of(f) || !img.width().is_multiple_of(f) {
        return Err(Error::param(format!(
            "downscale factor {f} does not divide {}x{}",
            img.height(),
            img.width()
        )));
    }
    resize(img, img.height() / f, img.width() / f, spec.method)
}

/// Bicubic upscale of a square image to `out_side x out_side`.
pub fn upscale_bicubic(img: &Image, out_side: usize) -> Result<Image> {
    if out_side < img.height() || out_side < img.width() {
        return Err(Error::param(format!(
            "cannot upscale {}x{} to {out_side}",
            img.height(),
            img.width()
        )));
    }
    resize(img, out_side, out_side, ResampleMethod::Bicubic)
}

/// Nearest-neighbour down- then up-sampling by `factor`, leaving a blocky image.
pub fn final_resample(img: &Image, factor: usize) -> Result<Image> {
    let small = downscale(
        img,
        DownscaleSpec {
            factor,
            method: ResampleMethod::Nearest,
        },
    )?;
    resize(&small, img.height(), img.width(), ResampleMethod::Nearest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, a: f64, b: f64, c0: f64) -> Image {
        Image::from_fn(h, w, 1, |y, x, _| c0 + a * x as f64 + b * y as f64).unwrap()
    }

    #[test]
    fn cubic_weights_partition_unity() {
        for t in [0.0, 0.1, 0.25, 0.5, 0.9] {
            let s: f64 = (-1..=2).map(|k| cubic(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
    }

    #[test]
    fn constants_survive_every_method() {
        let img = Image::constant(4, 4, 3, 0.37).unwrap();
        for method in [ResampleMethod::Nearest, ResampleMethod::Bilinear, ResampleMethod::Bicubic] {
            let out = downscale(&img, DownscaleSpec { factor: 2, method }).unwrap();
            assert_eq!((out.height(), out.width()), (2, 2));
            assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
        }
        let up = upscale_bicubic(&Image::constant(3, 3, 1, 0.6).unwrap(), 9).unwrap();
        assert!(up.data().iter().all(|v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn nearest_picks_upper_left_of_block_center() {
        // src = 2d + 0.5, index = ceil(src - 0.5) = 2d.
        let img = Image::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f64 / 15.0).unwrap();
        let out = downscale(&img, DownscaleSpec { factor: 2, method: ResampleMethod::Nearest }).unwrap();
        let expected = [0.0, 2.0, 8.0, 10.0].map(|v| v / 15.0);
        assert_eq!(out.data(), &expected);
        // Factor 4 on an 8x8 grid selects rows/cols 1 and 5.
        let img = Image::from_fn(8, 8, 1, |y, x, _| (y * 8 + x) as f64 / 63.0).unwrap();
        let out = downscale(&img, DownscaleSpec { factor: 4, method: ResampleMethod::Nearest }).unwrap();
        let expected = [9.0, 13.0, 41.0, 45.0].map(|v| v / 63.0);
        assert_eq!(out.data(), &expected);
    }

    #[test]
    fn bilinear_halving_samples_a_ramp_exactly() {
        let (a, b, c0) = (0.01, 0.02, 0.1);
        let img = ramp(16, 16, a, b, c0);
        let out = downscale(&img, DownscaleSpec { factor: 2, method: ResampleMethod::Bilinear }).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let (sx, sy) = (2.0 * x as f64 + 0.5, 2.0 * y as f64 + 0.5);
                assert!((out.get(y, x, 0) - (c0 + a * sx + b * sy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bicubic_reproduces_affine_ramps_in_the_interior() {
        let (a, b, c0) = (0.015, 0.01, 0.2);
        let img = ramp(16, 16, a, b, c0);
        let out = upscale_bicubic(&img, 32).unwrap();
        for y in 4..28 {
            for x in 4..28 {
                let sx = (x as f64 + 0.5) / 2.0 - 0.5;
                let sy = (y as f64 + 0.5) / 2.0 - 0.5;
                assert!((out.get(y, x, 0) - (c0 + a * sx + b * sy)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_size_bicubic_is_identity() {
        let img = Image::from_fn(9, 9, 3, |y, x, c| ((y * 7 + x * 3 + c) % 11) as f64 / 10.0).unwrap();
        assert!(upscale_bicubic(&img, 9).unwrap().max_abs_diff(&img) <= 1e-12);
        assert!(upscale_bicubic(&img, 8).is_err());
    }

    #[test]
    fn final_resample_is_blocky_and_idempotent() {
        let img = Image::from_fn(12, 12, 1, |y, x, _| ((y * 5 + x * 3) % 7) as f64 / 6.0).unwrap();
        let once = final_resample(&img, 2).unwrap();
        for y in (0..12).step_by(2) {
            for x in (0..12).step_by(2) {
                let v = once.get(y, x, 0);
                assert_eq!([once.get(y, x + 1, 0), once.get(y + 1, x, 0), once.get(y + 1, x + 1, 0)], [v; 3]);
            }
        }
        assert_eq!(final_resample(&once, 2).unwrap(), once);
        assert!(final_resample(&Image::constant(6, 6, 1, 0.5).unwrap(), 4).is_err());
    }
}
