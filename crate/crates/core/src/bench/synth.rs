//! Procedural individuals: each identity is a seeded spot-and-stripe texture,
//! and each encounter views it through a small affine and photometric jitter.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::PIPELINE_SIDE;
use crate::image::Image;
use crate::rng::{derive_seed_n, seeded, SeededRng};
use crate::split::ManifestRecord;
use crate::{Error, Result};

/// A set of sinusoidal stripes with random orientation and phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StripeBand {
    pub count: usize,
    pub period: (f64, f64),
    pub amplitude: f64,
}

/// Texture and encounter parameters. Jitter fields are upper bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_spots: usize,
    pub spot_radius: (f64, f64),
    pub spot_amplitude: (f64, f64),
    pub fine_stripes: StripeBand,
    pub coarse_stripes: StripeBand,
    /// Translation bound as a fraction of the image side.
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    pub max_scale_delta: f64,
    pub max_brightness: f64,
    pub max_contrast: f64,
    pub max_correlation: f64,
    pub collision_retries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_spots: 0,
            spot_radius: (3.0, 8.0),
            spot_amplitude: (0.1, 0.3),
            fine_stripes: StripeBand { count: 16, period: (16.0, 28.0), amplitude: 0.05 },
            coarse_stripes: StripeBand { count: 3, period: (80.0, 160.0), amplitude: 0.015 },
            max_translation: 0.005,
            max_rotation_deg: 1.0,
            max_scale_delta: 0.01,
            max_brightness: 0.05,
            max_contrast: 0.05,
            max_correlation: 0.9,
            collision_retries: 20,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: (f64, f64)| r.0 > 0.0 && r.0 <= r.1;
        let bands = [self.fine_stripes, self.coarse_stripes];
        if !(ordered(self.spot_radius) && ordered(self.spot_amplitude) && bands.iter().all(|b| ordered(b.period) && b.amplitude >= 0.0)) {
            return Err(Error::param("synthetic ranges must be positive and ordered"));
        }
        let bounded = [
            (self.max_translation, 0.10, "max_translation"),
            (self.max_rotation_deg, 15.0, "max_rotation_deg"),
            (self.max_scale_delta, 0.10, "max_scale_delta"),
            (self.max_brightness, 0.10, "max_brightness"),
            (self.max_contrast, 0.10, "max_contrast"),
        ];
        for (v, hi, name) in bounded {
            if !(0.0..=hi).contains(&v) {
                return Err(Error::param(format!("{name} = {v} outside [0, {hi}]")));
            }
        }
        if !(self.max_correlation > 0.0 && self.max_correlation <= 1.0) {
            return Err(Error::param("max_correlation must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// A rasterized identity pattern at pipeline resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticIdentity {
    pub identity_seed: u64,
    texture: Vec<f64>,
}

impl SyntheticIdentity {
    pub fn generate(identity_seed: u64, cfg: &SynthConfig) -> Self {
        let n = PIPELINE_SIDE;
        let mut rng = seeded(identity_seed);
        let mut tex = vec![0.0; n * n];
        for band in [cfg.fine_stripes, cfg.coarse_stripes] {
            for _ in 0..band.count {
                let period = rng.random_range(band.period.0..=band.period.1);
                let angle = rng.random_range(0.0..PI);
                let phase = rng.random_range(0.0..2.0 * PI);
                let (s, c) = angle.sin_cos();
                let k = 2.0 * PI / period;
                let row_phase: Vec<f64> = (0..n).map(|x| k * c * x as f64).collect();
                for y in 0..n {
                    let base = k * s * y as f64 + phase;
                    for (x, rp) in row_phase.iter().enumerate() {
                        tex[y * n + x] += band.amplitude * (base + rp).sin();
                    }
                }
            }
        }
        for _ in 0..cfg.n_spots {
            let cx = rng.random_range(0.0..n as f64);
            let cy = rng.random_range(0.0..n as f64);
            let r = rng.random_range(cfg.spot_radius.0..=cfg.spot_radius.1);
            let amp = rng.random_range(cfg.spot_amplitude.0..=cfg.spot_amplitude.1) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let reach = r + 1.5;
            let (y0, y1) = ((cy - reach).floor().max(0.0) as usize, ((cy + reach).ceil() as usize).min(n - 1));
            let (x0, x1) = ((cx - reach).floor().max(0.0) as usize, ((cx + reach).ceil() as usize).min(n - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    // Soft edge one pixel either side of the rim.
                    let w = ((r + 1.0 - d) / 2.0).clamp(0.0, 1.0);
                    tex[y * n + x] += amp * w;
                }
            }
        }
        for v in &mut tex {
            *v = (0.5 + *v).clamp(0.05, 0.95);
        }
        Self { identity_seed, texture: tex }
    }

    pub fn texture(&self) -> &[f64] {
        &self.texture
    }

    /// Bilinear lookup with mirrored borders.
    fn sample(&self, y: f64, x: f64) -> f64 {
        let n = PIPELINE_SIDE as isize;
        let mirror = |i: isize| -> usize {
            let period = 2 * n;
            let m = i.rem_euclid(period);
            (if m >= n { period - 1 - m } else { m }) as usize
        };
        let (fy, fx) = (y.floor(), x.floor());
        let (ty, tx) = (y - fy, x - fx);
        let (iy, ix) = (fy as isize, fx as isize);
        let at = |yy: isize, xx: isize| self.texture[mirror(yy) * PIPELINE_SIDE + mirror(xx)];
        let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
        let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Normalized cross-correlation of two equally sized signals.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        num += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    num / (va * vb).sqrt()
}

/// One viewing of an identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncounterSpec {
    pub identity: usize,
    pub translation: [f64; 2],
    pub rotation_deg: f64,
    pub scale: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub instance_seed: u64,
}

impl EncounterSpec {
    pub fn sample(identity: usize, instance_seed: u64, cfg: &SynthConfig) -> Self {
        let mut rng = seeded(instance_seed);
        let sym = |rng: &mut SeededRng, b: f64| if b == 0.0 { 0.0 } else { rng.random_range(-b..=b) };
        let t = cfg.max_translation * PIPELINE_SIDE as f64;
        Self {
            identity,
            translation: [sym(&mut rng, t), sym(&mut rng, t)],
            rotation_deg: sym(&mut rng, cfg.max_rotation_deg),
            scale: 1.0 + sym(&mut rng, cfg.max_scale_delta),
            brightness: sym(&mut rng, cfg.max_brightness),
            contrast: 1.0 + sym(&mut rng, cfg.max_contrast),
            instance_seed,
        }
    }

    pub fn within(&self, cfg: &SynthConfig) -> bool {
        let eps = 1e-12;
        let t = cfg.max_translation * PIPELINE_SIDE as f64 + eps;
        self.translation.iter().all(|v| v.abs() <= t)
            && self.rotation_deg.abs() <= cfg.max_rotation_deg + eps
            && (self.scale - 1.0).abs() <= cfg.max_scale_delta + eps
            && self.brightness.abs() <= cfg.max_brightness + eps
            && (self.contrast - 1.0).abs() <= cfg.max_contrast + eps
    }

    /// Renders the encounter as a single-channel pipeline-sized image.
    pub fn render(&self, identity: &SyntheticIdentity) -> Image {
        let n = PIPELINE_SIDE;
        let c = (n as f64 - 1.0) / 2.0;
        let (s, co) = self.rotation_deg.to_radians().sin_cos();
        let inv = 1.0 / self.scale;
        let mut data = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let dx = x as f64 - c - self.translation[0];
                let dy = y as f64 - c - self.translation[1];
                let u = (co * dx + s * dy) * inv + c;
                let v = (-s * dx + co * dy) * inv + c;
                let val = identity.sample(v, u);
                data.push((val - 0.5) * self.contrast + 0.5 + self.brightness);
            }
        }
        Image::from_clamped(n, n, 1, data).expect("pipeline-sized buffer")
    }
}

/// Identities plus encounter specs; pixels are rendered on demand.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub identities: Vec<SyntheticIdentity>,
    pub encounters: Vec<EncounterSpec>,
    pub manifest: Vec<ManifestRecord>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.encounters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encounters.is_empty()
    }

    pub fn render(&self, index: usize) -> Image {
        let e = &self.encounters[index];
        e.render(&self.identities[e.identity])
    }
}

pub fn identity_name(i: usize) -> String {
    format!("id{i:03}")
}

pub fn image_name(identity: usize, k: usize) -> String {
    format!("id{identity:03}_{k:02}")
}

/// Builds `n_identities` distinct patterns and `per_identity` encounters each.
/// A pattern whose absolute correlation with an earlier one reaches the bound is redrawn.
pub fn generate_dataset(n_identities: usize, per_identity: usize, cfg: &SynthConfig, master_seed: u64) -> Result<SyntheticDataset> {
    cfg.validate()?;
    if n_identities == 0 || per_identity == 0 {
        return Err(Error::param("dataset needs at least one identity and one image each"));
    }
    let mut identities: Vec<SyntheticIdentity> = Vec::with_capacity(n_identities);
    for i in 0..n_identities {
        let mut accepted = None;
        for attempt in 0..=cfg.collision_retries {
            let seed = derive_seed_n(master_seed, &format!("synth/identity/{attempt}"), i as u64);
            let cand = SyntheticIdentity::generate(seed, cfg);
            if identities.iter().all(|o| ncc(o.texture(), cand.texture()).abs() < cfg.max_correlation) {
                accepted = Some(cand);
                break;
            }
        }
        identities.push(accepted.ok_or_else(|| {
            Error::Training(format!("identity {i}: no pattern below correlation {} after {} retries", cfg.max_correlation, cfg.collision_retries))
        })?);
    }
    let mut encounters = Vec::with_capacity(n_identities * per_identity);
    let mut manifest = Vec::with_capacity(n_identities * per_identity);
    for i in 0..n_identities {
        for k in 0..per_identity {
            let seed = derive_seed_n(master_seed, &format!("synth/encounter/{i}"), k as u64);
            encounters.push(EncounterSpec::sample(i, seed, cfg));
            let name = image_name(i, k);
            let mut rec = ManifestRecord::new(name.clone(), identity_name(i));
            rec.path = format!("synthetic/{name}.png");
            rec.timestamp = Some((i * per_identity + k) as i64);
            rec.dataset = Some("synthetic".into());
            manifest.push(rec);
        }
    }
    Ok(SyntheticDataset { identities, encounters, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_deterministic_and_counted() {
        let cfg = SynthConfig::default();
        let a = generate_dataset(4, 3, &cfg, 5).unwrap();
        let b = generate_dataset(4, 3, &cfg, 5).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.render(7), b.render(7));
        assert_eq!(a.len(), 12);
        assert_eq!(a.manifest.iter().map(|r| &r.identity_id).collect::<std::collections::BTreeSet<_>>().len(), 4);
        assert!(a.encounters.iter().all(|e| e.within(&cfg)));
    }

    #[test]
    fn same_identity_correlates_more() {
        let cfg = SynthConfig::default();
        let d = generate_dataset(6, 4, &cfg, 11).unwrap();
        let imgs: Vec<Image> = (0..d.len()).map(|i| d.render(i)).collect();
        let (mut same, mut diff) = (vec![], vec![]);
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                let r = ncc(imgs[i].data(), imgs[j].data());
                if d.encounters[i].identity == d.encounters[j].identity { same.push(r) } else { diff.push(r) }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&same) > mean(&diff) + 0.2, "{} vs {}", mean(&same), mean(&diff));
    }

    #[test]
    fn identity_render_without_jitter_is_the_texture() {
        let cfg = SynthConfig::default();
        let id = SyntheticIdentity::generate(3, &cfg);
        let e = EncounterSpec { identity: 0, translation: [0.0; 2], rotation_deg: 0.0, scale: 1.0, brightness: 0.0, contrast: 1.0, instance_seed: 0 };
        let img = e.render(&id);
        assert!(img.data().iter().zip(id.texture()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn jitter_bounds_are_enforced() {
        let cfg = SynthConfig { max_rotation_deg: 20.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let strict = SynthConfig { max_translation: 0.0, max_rotation_deg: 0.0, ..Default::default() };
        let e = EncounterSpec::sample(0, 9, &strict);
        assert_eq!(e.translation, [0.0; 2]);
        assert!(e.within(&strict));
    }

    #[test]
    fn impossible_correlation_budget_fails() {
        let cfg = SynthConfig { max_correlation: 1e-6, collision_retries: 2, ..Default::default() };
        assert!(matches!(generate_dataset(3, 1, &cfg, 1), Err(Error::Training(_))));
    }
}
