//! Browser bindings: kernel heatmaps, a degradation preview on a synthetic
//! individual, and the CurricularFace negative-logit curve.

use reid_degrade::bench::{EncounterSpec, StripeBand, SynthConfig, SyntheticIdentity};
use reid_degrade::curricular::{negative_logit, target_logit};
use reid_degrade::degrade::{degrade_image, DegradationConfig, OpTrace, PipelineKind};
use reid_degrade::image::Image;
use reid_degrade::kernel::{sample_blur_spec, BlurFamily, KernelGrid};
use reid_degrade::rng::seeded;
use reid_degrade::Result;
use wasm_bindgen::prelude::*;

/// Textures with more contrast than the benchmark default, so changes are visible.
pub fn preview_config() -> SynthConfig {
    SynthConfig {
        n_spots: 14,
        fine_stripes: StripeBand { count: 16, period: (16.0, 28.0), amplitude: 0.12 },
        ..SynthConfig::default()
    }
}

pub fn sample_kernel(family: &str, seed: u64, overrides: &str) -> Result<(String, KernelGrid)> {
    let family: BlurFamily = family.parse()?;
    let mut spec = sample_blur_spec(family, &mut seeded(seed));
    for pair in overrides.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| reid_degrade::Error::Parameter(format!("`{pair}` is not key=value")))?;
        spec.set_param(k.trim(), v)?;
    }
    Ok((format!("{} {}", spec.family(), spec.describe()), spec.kernel()?))
}

pub fn render_identity(identity_seed: u64, encounter_seed: u64) -> Image {
    let cfg = preview_config();
    let identity = SyntheticIdentity::generate(identity_seed, &cfg);
    EncounterSpec::sample(0, encounter_seed, &cfg).render(&identity)
}

pub fn preview(pipeline: &str, identity_seed: u64, seed: u64) -> Result<(Image, Image, OpTrace)> {
    let kind: PipelineKind = pipeline.parse()?;
    let clean = render_identity(identity_seed, identity_seed ^ 0x5eed);
    let (degraded, trace) = degrade_image(&DegradationConfig::default(), "preview", &clean, kind, seed)?;
    Ok((clean, degraded, trace))
}

/// `(cos_j, N(cos_j))` samples on `[-1, 1]` and the target logit `T(cos_y)`.
pub fn negative_curve(cos_y: f64, margin: f64, t: f64, points: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let (target, _) = target_logit(cos_y, margin);
    let n = points.max(2);
    let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    let ys = xs.iter().map(|&c| negative_logit(target, c, t).0).collect();
    (target, xs, ys)
}

/// Row-major RGBA bytes for a 1- or 3-channel image.
pub fn to_rgba(img: &Image) -> Vec<u8> {
    let bytes = img.to_u8();
    let ch = img.channels();
    bytes
        .chunks_exact(ch)
        .flat_map(|p| if ch == 1 { [p[0], p[0], p[0], 255] } else { [p[0], p[1], p[2], 255] })
        .collect()
}

fn js_err(e: reid_degrade::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct KernelView {
    side: usize,
    weights: Vec<f64>,
    label: String,
}

#[wasm_bindgen]
impl KernelView {
    #[wasm_bindgen(getter)]
    pub fn side(&self) -> usize {
        self.side
    }

    #[wasm_bindgen(getter)]
    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn label(&self) -> String {
        self.label.clone()
    }
}

#[wasm_bindgen]
pub fn kernel(family: &str, seed: u64, overrides: &str) -> std::result::Result<KernelView, JsError> {
    let (label, k) = sample_kernel(family, seed, overrides).map_err(js_err)?;
    Ok(KernelView { side: k.side(), weights: k.weights().to_vec(), label })
}

#[wasm_bindgen]
pub struct PreviewView {
    side: usize,
    clean: Vec<u8>,
    degraded: Vec<u8>,
    trace: String,
    psnr: f64,
}

#[wasm_bindgen]
impl PreviewView {
    #[wasm_bindgen(getter)]
    pub fn side(&self) -> usize {
        self.side
    }

    #[wasm_bindgen(getter)]
    pub fn clean(&self) -> Vec<u8> {
        self.clean.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn degraded(&self) -> Vec<u8> {
        self.degraded.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn trace(&self) -> String {
        self.trace.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn psnr(&self) -> f64 {
        self.psnr
    }
}

#[wasm_bindgen]
pub fn degrade_preview(pipeline: &str, identity_seed: u64, seed: u64) -> std::result::Result<PreviewView, JsError> {
    let (clean, degraded, trace) = preview(pipeline, identity_seed, seed).map_err(js_err)?;
    Ok(PreviewView {
        side: clean.height(),
        psnr: degraded.psnr(&clean),
        clean: to_rgba(&clean),
        degraded: to_rgba(&degraded),
        trace: trace.to_json_line(),
    })
}

#[wasm_bindgen]
pub struct CurveView {
    target: f64,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

#[wasm_bindgen]
impl CurveView {
    #[wasm_bindgen(getter)]
    pub fn target(&self) -> f64 {
        self.target
    }

    #[wasm_bindgen(getter)]
    pub fn xs(&self) -> Vec<f64> {
        self.xs.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn ys(&self) -> Vec<f64> {
        self.ys.clone()
    }
}

#[wasm_bindgen]
pub fn curricular_curve(cos_y: f64, margin: f64, t: f64, points: usize) -> CurveView {
    let (target, xs, ys) = negative_curve(cos_y, margin, t, points);
    CurveView { target, xs, ys }
}
