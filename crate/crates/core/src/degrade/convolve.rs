use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::image::Image;
use crate::kernel::KernelGrid;
use crate::{Error, Result};

/// Kernels with more non-zero taps than this go through the FFT path.
const FFT_TAP_THRESHOLD: usize = 96;

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let i = i.rem_euclid(period);
    if i >= n as isize {
        (period - i) as usize
    } else {
        i as usize
    }
}

fn pad_plane(plane: &[f64], h: usize, w: usize, r: usize) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut out = Vec::with_capacity(ph * pw);
    for py in 0..ph {
        let sy = reflect(py as isize - r as isize, h);
        let row = &plane[sy * w..(sy + 1) * w];
        for px in 0..pw {
            out.push(row[reflect(px as isize - r as isize, w)]);
        }
    }
    (out, ph, pw)
}

/// Per-channel 2-D convolution with reflect padding; output has the input size
/// and is clamped to `[0, 1]`.
pub fn convolve(img: &Image, kernel: &KernelGrid) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    if kernel.side() > h || kernel.side() > w {
        return Err(Error::param(format!(
            "kernel side {} exceeds image size {h}x{w}",
            kernel.side()
        )));
    }
    let planes: Vec<Vec<f64>> = if kernel.nonzero_taps() > FFT_TAP_THRESHOLD {
        let fft = FftConvolver::new(kernel, h, w);
        let inputs: Vec<Vec<f64>> = (0..img.channels()).map(|c| img.plane(c)).collect();
        let mut out = Vec::with_capacity(inputs.len());
        for pair in inputs.chunks(2) {
            let (a, b) = fft.apply(&pair[0], pair.get(1).map(Vec::as_slice));
            out.push(a);
            out.extend(b);
        }
        out
    } else {
        (0..img.channels())
            .map(|c| convolve_plane_direct(&img.plane(c), h, w, kernel))
            .collect()
    };
    Image::from_planes(h, w, &planes)
}

/// Direct summation over non-zero taps.
pub(crate) fn convolve_plane_direct(plane: &[f64], h: usize, w: usize, kernel: &KernelGrid) -> Vec<f64> {
    let r = kernel.radius();
    let (padded, _, pw) = pad_plane(plane, h, w, r);
    let mut out = vec![0.0; h * w];
    let ri = r as isize;
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            let wt = kernel.at(dy, dx);
            if wt == 0.0 {
                continue;
            }
            // out(y, x) += k(dy, dx) * img(y - dy, x - dx)
            let x0 = (ri - dx) as usize;
            for y in 0..h {
                let py = (y as isize + ri - dy) as usize;
                let src = &padded[py * pw + x0..py * pw + x0 + w];
                for (o, s) in out[y * w..(y + 1) * w].iter_mut().zip(src) {
                    *o += wt * s;
                }
            }
        }
    }
    out
}

fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k.is_multiple_of(p) {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

struct FftConvolver {
    h: usize,
    w: usize,
    r: usize,
    nh: usize,
    nw: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex<f64>>,
}

impl FftConvolver {
    fn new(kernel: &KernelGrid, h: usize, w: usize) -> Self {
        let r = kernel.radius();
        let nh = next_fast_len(h + 2 * r);
        let nw = next_fast_len(w + 2 * r);
        let mut planner = FftPlanner::new();
        let mut me = Self {
            h,
            w,
            r,
            nh,
            nw,
            row_fwd: planner.plan_fft_forward(nw),
            row_inv: planner.plan_fft_inverse(nw),
            col_fwd: planner.plan_fft_forward(nh),
            col_inv: planner.plan_fft_inverse(nh),
            kernel_hat: Vec::new(),
        };
        let k = kernel.side();
        let mut buf = vec![Complex::new(0.0, 0.0); nh * nw];
        for y in 0..k {
            for x in 0..k {
                buf[y * nw + x].re = kernel.weights()[y * k + x];
            }
        }
        me.kernel_hat = me.forward(&mut buf, k);
        me
    }

    fn transpose(src: &[Complex<f64>], rows: usize, cols: usize) -> Vec<Complex<f64>> {
        const BLOCK: usize = 32;
        let mut out = vec![Complex::new(0.0, 0.0); rows * cols];
        for r0 in (0..rows).step_by(BLOCK) {
            for c0 in (0..cols).step_by(BLOCK) {
                for r in r0..(r0 + BLOCK).min(rows) {
                    for c in c0..(c0 + BLOCK).min(cols) {
                        out[c * rows + r] = src[r * cols + c];
                    }
                }
            }
        }
        out
    }

    /// 2-D transform of a buffer whose rows past `live_rows` are zero. The
    /// spectrum is returned transposed (`nw x nh`); products do not care.
    fn forward(&self, buf: &mut [Complex<f64>], live_rows: usize) -> Vec<Complex<f64>> {
        self.row_fwd.process(&mut buf[..live_rows * self.nw]);
        let mut t = Self::transpose(buf, self.nh, self.nw);
        self.col_fwd.process(&mut t);
        t
    }

    /// Inverse of a transposed spectrum; the last pass only covers the `h` rows
    /// starting at `off` that survive cropping.
    fn inverse(&self, t: &mut [Complex<f64>], off: usize) -> Vec<Complex<f64>> {
        self.col_inv.process(t);
        let mut buf = Self::transpose(t, self.nw, self.nh);
        self.row_inv.process(&mut buf[off * self.nw..(off + self.h) * self.nw]);
        buf
    }

    /// Convolves one or two planes; a second plane rides in the imaginary part,
    /// which the real kernel keeps separate.
    fn apply(&self, plane: &[f64], second: Option<&[f64]>) -> (Vec<f64>, Option<Vec<f64>>) {
        let (padded, ph, pw) = pad_plane(plane, self.h, self.w, self.r);
        let mut buf = vec![Complex::new(0.0, 0.0); self.nh * self.nw];
        for y in 0..ph {
            for x in 0..pw {
                buf[y * self.nw + x].re = padded[y * pw + x];
            }
        }
        if let Some(p2) = second {
            let (padded, _, _) = pad_plane(p2, self.h, self.w, self.r);
            for y in 0..ph {
                for x in 0..pw {
                    buf[y * self.nw + x].im = padded[y * pw + x];
                }
            }
        }
        let mut t = self.forward(&mut buf, ph);
        for (b, k) in t.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        let off = 2 * self.r;
        let buf = self.inverse(&mut t, off);
        let norm = (self.nh * self.nw) as f64;
        let extract = |part: fn(&Complex<f64>) -> f64| {
            let mut out = Vec::with_capacity(self.h * self.w);
            for y in 0..self.h {
                for x in 0..self.w {
                    out.push(part(&buf[(y + off) * self.nw + x + off]) / norm);
                }
            }
            out
        };
        (extract(|c| c.re), second.map(|_| extract(|c| c.im)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{make_defocus_kernel, make_motion_kernel, DefocusSpec, MotionBlurSpec};
    use crate::rng::seeded;
    use rand::Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = seeded(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.random::<f64>()).unwrap()
    }

    /// Textbook double loop with explicit reflect indexing.
    fn oracle(img: &Image, k: &KernelGrid) -> Image {
        let r = k.radius() as isize;
        Image::from_fn(img.height(), img.width(), img.channels(), |y, x, c| {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let sy = reflect(y as isize - dy, img.height());
                    let sx = reflect(x as isize - dx, img.width());
                    acc += k.at(dy, dx) * img.get(sy, sx, c);
                }
            }
            acc
        })
        .unwrap()
    }

    #[test]
    fn reflect_mirrors_without_edge_repeat() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let img = random_image(9, 11, 3, 1);
        let out = convolve(&img, &KernelGrid::delta(5).unwrap()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constants_are_preserved() {
        let img = Image::constant(40, 40, 1, 0.42).unwrap();
        let k = make_defocus_kernel(&DefocusSpec { radius: 9, gauss_sigma: 0.3 }).unwrap();
        let out = convolve(&img, &k).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-12));
    }

    #[test]
    fn box_filter_matches_double_loop() {
        let img = random_image(8, 8, 1, 2);
        let k = KernelGrid::normalized(3, vec![1.0; 9]).unwrap();
        let out = convolve(&img, &k).unwrap();
        assert!(out.max_abs_diff(&oracle(&img, &k)) <= 1e-12);
    }

    #[test]
    fn asymmetric_kernel_is_flipped() {
        let img = random_image(12, 10, 1, 3);
        let k = make_motion_kernel(&MotionBlurSpec { side: 5, theta: 0.3, direction: 0.6, shift: [-1, 0] }).unwrap();
        let out = convolve(&img, &k).unwrap();
        assert!(out.max_abs_diff(&oracle(&img, &k)) <= 1e-12);
    }

    #[test]
    fn fft_path_agrees_with_direct_summation() {
        let img = random_image(48, 40, 3, 4);
        let k = make_defocus_kernel(&DefocusSpec { radius: 9, gauss_sigma: 0.4 }).unwrap();
        assert!(k.nonzero_taps() > FFT_TAP_THRESHOLD);
        let fast = convolve(&img, &k).unwrap();
        assert!(fast.max_abs_diff(&oracle(&img, &k)) <= 1e-10);
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let img = random_image(4, 4, 1, 5);
        assert!(convolve(&img, &KernelGrid::delta(5).unwrap()).is_err());
    }

    #[test]
    fn fast_lengths() {
        assert_eq!(next_fast_len(7), 8);
        assert_eq!(next_fast_len(431), 432);
        assert_eq!(next_fast_len(384), 384);
    }
}
