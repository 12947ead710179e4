//! A deliberately small embedder: area pooling to a grayscale grid, per-image
//! standardization, one ReLU hidden layer and a linear projection to a unit
//! vector. Gradients are written out by hand.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::rng::SeededRng;
use crate::{Error, Result};

pub const POOL_SIDE: usize = 32;
pub const INPUT_DIM: usize = POOL_SIDE * POOL_SIDE;
pub const MAX_PARAMETERS: usize = 100_000;

/// Area-averages a grayscale view of `img` to `POOL_SIDE x POOL_SIDE` and standardizes it.
pub fn pooled_input(img: &Image) -> Result<Vec<f64>> {
    let (h, w) = (img.height(), img.width());
    if h % POOL_SIDE != 0 || w % POOL_SIDE != 0 {
        return Err(Error::param(format!("{h}x{w} image does not pool evenly to {POOL_SIDE}x{POOL_SIDE}")));
    }
    let gray = img.to_gray();
    let (by, bx) = (h / POOL_SIDE, w / POOL_SIDE);
    let mut out = vec![0.0; INPUT_DIM];
    for y in 0..h {
        for x in 0..w {
            out[(y / by) * POOL_SIDE + x / bx] += gray.get(y, x, 0);
        }
    }
    let area = (by * bx) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    let mean = out.iter().sum::<f64>() / INPUT_DIM as f64;
    let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / INPUT_DIM as f64;
    let inv = 1.0 / (var.sqrt() + 1e-6);
    out.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyEmbedder {
    pub hidden: usize,
    pub dim: usize,
    /// `hidden x INPUT_DIM`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `dim x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Activations {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub raw: Vec<f64>,
    pub norm: f64,
    pub unit: Vec<f64>,
}

impl TinyEmbedder {
    pub fn new(hidden: usize, dim: usize, rng: &mut SeededRng) -> Result<Self> {
        if hidden == 0 || dim == 0 {
            return Err(Error::param("embedder layers must be non-empty"));
        }
        let count = hidden * (INPUT_DIM + 1) + dim * (hidden + 1);
        if count > MAX_PARAMETERS {
            return Err(Error::param(format!("{count} parameters exceed the {MAX_PARAMETERS} budget")));
        }
        let he = Normal::new(0.0, (2.0 / INPUT_DIM as f64).sqrt()).expect("finite sd");
        let xavier = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("finite sd");
        Ok(Self {
            hidden,
            dim,
            w1: (0..hidden * INPUT_DIM).map(|_| he.sample(rng)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..dim * hidden).map(|_| xavier.sample(rng)).collect(),
            b2: vec![0.0; dim],
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn forward(&self, x: &[f64]) -> Activations {
        let pre: Vec<f64> = (0..self.hidden)
            .map(|j| self.b1[j] + dot(&self.w1[j * INPUT_DIM..(j + 1) * INPUT_DIM], x))
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let raw: Vec<f64> = (0..self.dim)
            .map(|k| self.b2[k] + dot(&self.w2[k * self.hidden..(k + 1) * self.hidden], &hidden))
            .collect();
        let norm = dot(&raw, &raw).sqrt().max(1e-12);
        let unit = raw.iter().map(|v| v / norm).collect();
        Activations { pre, hidden, raw, norm, unit }
    }

    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).unit
    }

    /// Accumulates parameter gradients into `grads` given `dL/d unit`.
    pub fn backward(&self, x: &[f64], act: &Activations, d_unit: &[f64], grads: &mut TinyEmbedder) {
        let proj = dot(d_unit, &act.unit);
        let d_raw: Vec<f64> = d_unit.iter().zip(&act.unit).map(|(g, u)| (g - proj * u) / act.norm).collect();
        let mut d_hidden = vec![0.0; self.hidden];
        for k in 0..self.dim {
            let g = d_raw[k];
            grads.b2[k] += g;
            let row = k * self.hidden;
            for j in 0..self.hidden {
                grads.w2[row + j] += g * act.hidden[j];
                d_hidden[j] += g * self.w2[row + j];
            }
        }
        for j in 0..self.hidden {
            if act.pre[j] <= 0.0 {
                continue;
            }
            let g = d_hidden[j];
            grads.b1[j] += g;
            let row = &mut grads.w1[j * INPUT_DIM..(j + 1) * INPUT_DIM];
            for (r, xi) in row.iter_mut().zip(x) {
                *r += g * xi;
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden,
            dim: self.dim,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2].iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random unit vectors, one per class, as rows.
pub(crate) fn random_unit_rows(rows: usize, dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut w: Vec<f64> = (0..rows * dim).map(|_| rng.random::<f64>() - 0.5).collect();
    for r in w.chunks_exact_mut(dim) {
        let n = dot(r, r).sqrt();
        r.iter_mut().for_each(|v| *v /= n);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn pooled_input_is_standardized() {
        let img = Image::from_fn(64, 64, 3, |y, x, c| ((x * 3 + y * 5 + c) % 17) as f64 / 16.0).unwrap();
        let x = pooled_input(&img).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-4);
        assert!(pooled_input(&Image::constant(40, 40, 1, 0.5).unwrap()).is_err());
        assert!(pooled_input(&Image::constant(32, 32, 1, 0.5).unwrap()).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_is_unit_norm_and_within_budget() {
        let mut rng = seeded(2);
        let e = TinyEmbedder::new(64, 64, &mut rng).unwrap();
        assert!(e.parameter_count() <= MAX_PARAMETERS);
        let x: Vec<f64> = (0..INPUT_DIM).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let u = e.embed(&x);
        assert!((dot(&u, &u).sqrt() - 1.0).abs() < 1e-6);
        assert!(TinyEmbedder::new(200, 64, &mut rng).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded(4);
        let e = TinyEmbedder::new(6, 5, &mut rng).unwrap();
        let x: Vec<f64> = (0..INPUT_DIM).map(|_| rng.random::<f64>() - 0.5).collect();
        let target: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
        let loss = |m: &TinyEmbedder| dot(&m.embed(&x), &target);
        let mut grads = e.zeros_like();
        let act = e.forward(&x);
        e.backward(&x, &act, &target, &mut grads);
        let h = 1e-6;
        let probes = [(0usize, 3usize), (0, 700), (1, 2), (2, 7), (3, 4)];
        for (t, i) in probes {
            let mut plus = e.clone();
            plus.tensors_mut()[t][i] += h;
            let mut minus = e.clone();
            minus.tensors_mut()[t][i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let mut g = grads.clone();
            let an = g.tensors_mut()[t][i];
            assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "tensor {t}[{i}]: {fd} vs {an}");
        }
    }
}
