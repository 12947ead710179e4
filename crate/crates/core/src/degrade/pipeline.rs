use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::convolve::convolve;
use super::ops::{add_gaussian_noise, jpeg_compress, JpegSpec, NoiseSpec};
use crate::image::Image;
use crate::kernel::{sample_blur_spec_in, BlurFamily, BlurSpec, KernelRanges};
use crate::resample::{downscale, final_resample, resize, DownscaleSpec, ResampleMethod};
use crate::rng::{derive_seed, seeded, SeededRng};
use crate::{Error, Result};

/// Side length of every pipeline input and output.
pub const PIPELINE_SIDE: usize = 384;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    Simple,
    Diverse,
    DiversePlus,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 3] = [PipelineKind::Simple, PipelineKind::Diverse, PipelineKind::DiversePlus];

    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Simple => "simple",
            PipelineKind::Diverse => "diverse",
            PipelineKind::DiversePlus => "diverse-plus",
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "simple" => Ok(PipelineKind::Simple),
            "diverse" => Ok(PipelineKind::Diverse),
            "diverse-plus" | "diverse+" | "diverseplus" => Ok(PipelineKind::DiversePlus),
            other => Err(Error::param(format!("unknown pipeline `{other}`"))),
        }
    }
}

/// One fully-resolved degradation step. Serialized as `{"name": .., "params": ..}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum DegradeOp {
    Blur(BlurSpec),
    Downscale(DownscaleSpec),
    Noise { sigma: f64, seed: u64 },
    Jpeg { quality: u8 },
    /// Bicubic resize back to `side x side`.
    Resize { side: usize },
    FinalResample { factor: usize },
}

impl DegradeOp {
    pub fn name(&self) -> &'static str {
        match self {
            DegradeOp::Blur(_) => "blur",
            DegradeOp::Downscale(_) => "downscale",
            DegradeOp::Noise { .. } => "noise",
            DegradeOp::Jpeg { .. } => "jpeg",
            DegradeOp::Resize { .. } => "resize",
            DegradeOp::FinalResample { .. } => "final_resample",
        }
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        match self {
            DegradeOp::Blur(spec) => convolve(img, &spec.kernel()?),
            DegradeOp::Downscale(spec) => downscale(img, *spec),
            DegradeOp::Noise { sigma, seed } => add_gaussian_noise(img, NoiseSpec { sigma: *sigma }, &mut seeded(*seed)),
            DegradeOp::Jpeg { quality } => jpeg_compress(img, JpegSpec { quality: *quality }),
            DegradeOp::Resize { side } => {
                if img.height() == *side && img.width() == *side {
                    Ok(img.clone())
                } else {
                    resize(img, *side, *side, ResampleMethod::Bicubic)
                }
            }
            DegradeOp::FinalResample { factor } => final_resample(img, *factor),
        }
    }
}

/// Replayable record of a pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpTrace {
    pub image_id: String,
    pub sub_seed: u64,
    pub pipeline: PipelineKind,
    pub ops: Vec<DegradeOp>,
}

impl OpTrace {
    /// Re-executes the recorded operations.
    pub fn replay(&self, img: &Image) -> Result<Image> {
        apply_ops(img, &self.ops)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

pub fn apply_ops(img: &Image, ops: &[DegradeOp]) -> Result<Image> {
    let mut cur = img.clone();
    for op in ops {
        cur = op.apply(&cur)?;
    }
    Ok(cur)
}

/// Sampling ranges for all pipeline parameters. Overrides may only narrow the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    pub kernels: KernelRanges,
    pub noise_sigma: (f64, f64),
    pub jpeg_quality: (u8, u8),
    pub downscale_factors: Vec<usize>,
    pub downscale_methods: Vec<ResampleMethod>,
    pub final_factors: Vec<usize>,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            kernels: KernelRanges::default(),
            noise_sigma: NoiseSpec::RANGE,
            jpeg_quality: JpegSpec::RANGE,
            downscale_factors: vec![2, 4],
            downscale_methods: vec![ResampleMethod::Bilinear, ResampleMethod::Nearest],
            final_factors: vec![2, 4],
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernels.validate()?;
        let (lo, hi) = NoiseSpec::RANGE;
        if !(self.noise_sigma.0 <= self.noise_sigma.1 && self.noise_sigma.0 >= lo && self.noise_sigma.1 <= hi) {
            return Err(Error::param("noise_sigma must be a sub-range of [0.004, 0.01]"));
        }
        let (qlo, qhi) = JpegSpec::RANGE;
        if !(self.jpeg_quality.0 <= self.jpeg_quality.1 && self.jpeg_quality.0 >= qlo && self.jpeg_quality.1 <= qhi) {
            return Err(Error::param("jpeg_quality must be a sub-range of [30, 95]"));
        }
        for (name, list) in [("downscale_factors", &self.downscale_factors), ("final_factors", &self.final_factors)] {
            if list.is_empty() || list.iter().any(|f| *f != 2 && *f != 4) {
                return Err(Error::param(format!("{name} must be a non-empty subset of {{2, 4}}")));
            }
        }
        if self.downscale_methods.is_empty() || self.downscale_methods.contains(&ResampleMethod::Bicubic) {
            return Err(Error::param("downscale_methods must be a non-empty subset of {bilinear, nearest}"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: DegradationConfig = toml::from_str(text).map_err(|e| Error::param(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every `(factor, method)` downscale choice, in a fixed order.
    pub fn downscale_choices(&self) -> Vec<DownscaleSpec> {
        self.downscale_factors
            .iter()
            .flat_map(|&factor| self.downscale_methods.iter().map(move |&method| DownscaleSpec { factor, method }))
            .collect()
    }

    fn blur(&self, family: BlurFamily, rng: &mut SeededRng) -> DegradeOp {
        DegradeOp::Blur(sample_blur_spec_in(family, &self.kernels, rng))
    }

    fn any_blur(&self, rng: &mut SeededRng) -> DegradeOp {
        let family = BlurFamily::ALL[rng.random_range(0..BlurFamily::ALL.len())];
        self.blur(family, rng)
    }

    fn downscale(&self, rng: &mut SeededRng) -> DegradeOp {
        let choices = self.downscale_choices();
        DegradeOp::Downscale(choices[rng.random_range(0..choices.len())])
    }

    fn noise(&self, rng: &mut SeededRng) -> DegradeOp {
        let (lo, hi) = self.noise_sigma;
        let sigma = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        DegradeOp::Noise { sigma, seed: rng.random() }
    }

    fn jpeg(&self, rng: &mut SeededRng) -> DegradeOp {
        DegradeOp::Jpeg {
            quality: rng.random_range(self.jpeg_quality.0..=self.jpeg_quality.1),
        }
    }

    fn final_resample(&self, rng: &mut SeededRng) -> DegradeOp {
        DegradeOp::FinalResample {
            factor: self.final_factors[rng.random_range(0..self.final_factors.len())],
        }
    }

    /// Samples the operation list for one image without touching pixels.
    pub fn plan(&self, kind: PipelineKind, rng: &mut SeededRng) -> Vec<DegradeOp> {
        let mut ops = Vec::with_capacity(6);
        match kind {
            PipelineKind::Simple => {
                ops.push(self.blur(BlurFamily::Gaussian, rng));
                ops.push(self.downscale(rng));
                ops.push(self.noise(rng));
            }
            PipelineKind::Diverse => {
                let n_down = self.downscale_choices().len();
                let pick = rng.random_range(0..BlurFamily::ALL.len() + n_down);
                if pick < BlurFamily::ALL.len() {
                    ops.push(self.blur(BlurFamily::ALL[pick], rng));
                } else {
                    ops.push(DegradeOp::Downscale(self.downscale_choices()[pick - BlurFamily::ALL.len()]));
                }
                ops.push(self.noise(rng));
                ops.push(self.jpeg(rng));
            }
            PipelineKind::DiversePlus => {
                let mut slots = [0u8, 1, 2, 3];
                slots.shuffle(rng);
                for slot in slots {
                    ops.push(match slot {
                        0 => self.any_blur(rng),
                        1 => self.downscale(rng),
                        2 => self.noise(rng),
                        _ => self.jpeg(rng),
                    });
                }
            }
        }
        ops.push(DegradeOp::Resize { side: PIPELINE_SIDE });
        ops.push(self.final_resample(rng));
        ops
    }

    /// Trace-only mode: the full record for `image_id` under `master_seed`.
    pub fn trace(&self, image_id: &str, kind: PipelineKind, master_seed: u64) -> OpTrace {
        let sub_seed = derive_seed(master_seed, image_id);
        OpTrace {
            image_id: image_id.to_string(),
            sub_seed,
            pipeline: kind,
            ops: self.plan(kind, &mut seeded(sub_seed)),
        }
    }
}

fn check_input(img: &Image) -> Result<()> {
    if img.height() != PIPELINE_SIDE || img.width() != PIPELINE_SIDE {
        return Err(Error::param(format!(
            "pipeline input must be {PIPELINE_SIDE}x{PIPELINE_SIDE}, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Samples and applies a pipeline with the default ranges.
pub fn apply_pipeline(img: &Image, kind: PipelineKind, rng: &mut SeededRng) -> Result<(Image, Vec<DegradeOp>)> {
    check_input(img)?;
    let ops = DegradationConfig::default().plan(kind, rng);
    let out = apply_ops(img, &ops)?;
    Ok((out, ops))
}

/// Degrades one identified image; the sub-seed depends only on `(master_seed, image_id)`.
pub fn degrade_image(
    config: &DegradationConfig,
    image_id: &str,
    img: &Image,
    kind: PipelineKind,
    master_seed: u64,
) -> Result<(Image, OpTrace)> {
    check_input(img)?;
    let trace = config.trace(image_id, kind, master_seed);
    let out = trace.replay(img)?;
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image() -> Image {
        Image::from_fn(PIPELINE_SIDE, PIPELINE_SIDE, 3, |y, x, c| {
            0.5 + 0.3 * ((x as f64) * 0.05 + c as f64).sin() * ((y as f64) * 0.03).cos()
        })
        .unwrap()
    }

    #[test]
    fn traces_serialize_with_name_and_params() {
        let t = DegradationConfig::default().trace("img", PipelineKind::DiversePlus, 3);
        let line = t.to_json_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["image_id"], "img");
        assert!(v["ops"].as_array().unwrap().iter().all(|op| op["name"].is_string()));
        let back: OpTrace = serde_json::from_str(&line).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn pipeline_output_shape_and_range() {
        let img = test_image();
        for kind in PipelineKind::ALL {
            let (out, ops) = apply_pipeline(&img, kind, &mut seeded(11)).unwrap();
            assert_eq!((out.height(), out.width(), out.channels()), (384, 384, 3));
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(apply_ops(&img, &ops).unwrap(), out);
        }
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let img = Image::constant(128, 128, 1, 0.5).unwrap();
        assert!(apply_pipeline(&img, PipelineKind::Simple, &mut seeded(0)).is_err());
    }

    #[test]
    fn constant_images_change_only_by_noise_and_quantization() {
        let img = Image::constant(PIPELINE_SIDE, PIPELINE_SIDE, 1, 0.5).unwrap();
        for kind in [PipelineKind::Simple, PipelineKind::Diverse] {
            for seed in 0..4 {
                let (out, _) = degrade_image(&DegradationConfig::default(), "c", &img, kind, seed).unwrap();
                assert!(out.max_abs_diff(&img) <= 0.05, "{kind} seed {seed}");
            }
        }
    }

    #[test]
    fn simple_pipeline_structure() {
        let t = DegradationConfig::default().trace("x", PipelineKind::Simple, 1);
        let names: Vec<_> = t.ops.iter().map(DegradeOp::name).collect();
        assert_eq!(names, ["blur", "downscale", "noise", "resize", "final_resample"]);
        assert!(matches!(t.ops[0], DegradeOp::Blur(BlurSpec::Gaussian(_))));
    }

    #[test]
    fn config_overrides_must_narrow() {
        let cfg = DegradationConfig::from_toml("jpeg_quality = [50, 60]\nfinal_factors = [2]\n[kernels]\ngaussian_side = [3, 7]\n").unwrap();
        assert_eq!(cfg.jpeg_quality, (50, 60));
        assert_eq!(cfg.kernels.gaussian_side, (3, 7));
        assert!(DegradationConfig::from_toml("jpeg_quality = [10, 60]").is_err());
        assert!(DegradationConfig::from_toml("downscale_methods = [\"bicubic\"]").is_err());
        assert!(DegradationConfig::from_toml("bogus = 1").is_err());
    }
}
