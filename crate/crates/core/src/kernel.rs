//! Blur kernel families: anisotropic Gaussian, generalized Gaussian, motion line
//! and defocus disc. Kernels are built in `f64` from explicit parameter records,
//! and the records themselves can be sampled from configured ranges.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, SeededRng};
use crate::{Error, Result};

/// Square, odd-sided convolution kernel with non-negative weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrid {
    side: usize,
    weights: Vec<f64>,
}

impl KernelGrid {
    /// Builds a kernel from raw row-major weights, normalizing them to sum 1.
    pub fn normalized(side: usize, mut weights: Vec<f64>) -> Result<Self> {
        if side < 3 || side.is_multiple_of(2) {
            return Err(Error::param(format!("kernel side must be odd and >= 3, got {side}")));
        }
        if weights.len() != side * side {
            return Err(Error::param(format!(
                "expected {} kernel weights, got {}",
                side * side,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::param("kernel weights must be finite and non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::param("kernel has no mass"));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Self { side, weights })
    }

    /// Identity kernel: all mass on the center cell.
    pub fn delta(side: usize) -> Result<Self> {
        let mut w = vec![0.0; side * side];
        if let Some(c) = w.get_mut(side * side / 2) {
            *c = 1.0;
        }
        Self::normalized(side, w)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn radius(&self) -> usize {
        self.side / 2
    }

    /// Row-major weights; row index is the vertical offset.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dy, dx)` from the center; zero outside the grid.
    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius() as isize;
        if dy.abs() > r || dx.abs() > r {
            return 0.0;
        }
        self.weights[((dy + r) as usize) * self.side + (dx + r) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn center_weight(&self) -> f64 {
        self.weights[self.side * self.side / 2]
    }

    pub fn nonzero_taps(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    pub fn rotated_180(&self) -> Self {
        let mut weights = self.weights.clone();
        weights.reverse();
        Self {
            side: self.side,
            weights,
        }
    }

    pub fn transposed(&self) -> Self {
        let n = self.side;
        let mut weights = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                weights[x * n + y] = self.weights[y * n + x];
            }
        }
        Self { side: n, weights }
    }

    /// Largest elementwise difference to another kernel of the same side.
    pub fn max_abs_diff(&self, other: &KernelGrid) -> f64 {
        assert_eq!(self.side, other.side, "kernel sides differ");
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurFamily {
    Gaussian,
    GeneralizedGaussian,
    Motion,
    Defocus,
}

impl BlurFamily {
    pub const ALL: [BlurFamily; 4] = [
        BlurFamily::Gaussian,
        BlurFamily::GeneralizedGaussian,
        BlurFamily::Motion,
        BlurFamily::Defocus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlurFamily::Gaussian => "gaussian",
            BlurFamily::GeneralizedGaussian => "generalized_gaussian",
            BlurFamily::Motion => "motion",
            BlurFamily::Defocus => "defocus",
        }
    }
}

impl fmt::Display for BlurFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlurFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gaussian" | "gb" => Ok(BlurFamily::Gaussian),
            "generalized_gaussian" | "gg" => Ok(BlurFamily::GeneralizedGaussian),
            "motion" | "mb" => Ok(BlurFamily::Motion),
            "defocus" | "db" => Ok(BlurFamily::Defocus),
            other => Err(Error::param(format!("unknown blur family `{other}`"))),
        }
    }
}

/// Closed ranges every sampled parameter is drawn from. The defaults are the
/// widest accepted ranges; overrides may only narrow them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelRanges {
    pub gaussian_side: (usize, usize),
    pub gaussian_sigma: (f64, f64),
    pub gg_side: (usize, usize),
    pub gg_sigma: (f64, f64),
    pub gg_beta: (f64, f64),
    pub gg_noise: (f64, f64),
    pub motion_side: (usize, usize),
    pub motion_direction: (f64, f64),
    pub defocus_radius: (usize, usize),
    pub defocus_sigma: (f64, f64),
}

impl Default for KernelRanges {
    fn default() -> Self {
        Self {
            gaussian_side: (3, 21),
            gaussian_sigma: (0.1, 2.8),
            gg_side: (3, 21),
            gg_sigma: (0.5, 8.0),
            gg_beta: (0.5, 8.0),
            gg_noise: (0.9, 1.1),
            motion_side: (3, 21),
            motion_direction: (-1.0, 1.0),
            defocus_radius: (3, 21),
            defocus_sigma: (0.1, 0.5),
        }
    }
}

fn within<T: PartialOrd + Copy>(inner: (T, T), outer: (T, T)) -> bool {
    inner.0 <= inner.1 && inner.0 >= outer.0 && inner.1 <= outer.1
}

impl KernelRanges {
    /// Checks that every range is non-empty and inside the default range.
    pub fn validate(&self) -> Result<()> {
        let d = KernelRanges::default();
        let checks = [
            ("gaussian_side", within(self.gaussian_side, d.gaussian_side)),
            ("gaussian_sigma", within(self.gaussian_sigma, d.gaussian_sigma)),
            ("gg_side", within(self.gg_side, d.gg_side)),
            ("gg_sigma", within(self.gg_sigma, d.gg_sigma)),
            ("gg_beta", within(self.gg_beta, d.gg_beta)),
            ("gg_noise", within(self.gg_noise, d.gg_noise)),
            ("motion_side", within(self.motion_side, d.motion_side)),
            ("motion_direction", within(self.motion_direction, d.motion_direction)),
            ("defocus_radius", within(self.defocus_radius, d.defocus_radius)),
            ("defocus_sigma", within(self.defocus_sigma, d.defocus_sigma)),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::param(format!(
                    "range `{name}` must be non-empty and inside its default range"
                )));
            }
        }
        for (name, (lo, hi)) in [
            ("defocus_radius", self.defocus_radius),
            ("gaussian_side", self.gaussian_side),
            ("gg_side", self.gg_side),
            ("motion_side", self.motion_side),
        ] {
            if odd_count(lo, hi) == 0 {
                return Err(Error::param(format!("range `{name}` contains no odd size")));
            }
        }
        Ok(())
    }
}

fn odd_count(lo: usize, hi: usize) -> usize {
    let first = if lo % 2 == 1 { lo } else { lo + 1 };
    if first > hi {
        0
    } else {
        (hi - first) / 2 + 1
    }
}

fn sample_odd(rng: &mut SeededRng, (lo, hi): (usize, usize)) -> usize {
    let first = if lo % 2 == 1 { lo } else { lo + 1 };
    first + 2 * rng.random_range(0..odd_count(lo, hi))
}

fn sample_real(rng: &mut SeededRng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn sample_angle(rng: &mut SeededRng) -> f64 {
    rng.random_range(0.0..TAU)
}

fn check_side(name: &str, side: usize, range: (usize, usize)) -> Result<()> {
    if side.is_multiple_of(2) || side < range.0 || side > range.1 {
        return Err(Error::param(format!(
            "{name} must be odd in [{}, {}], got {side}",
            range.0, range.1
        )));
    }
    Ok(())
}

fn check_real(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if !(v.is_finite() && v >= lo && v <= hi) {
        return Err(Error::param(format!("{name} must lie in [{lo}, {hi}], got {v}")));
    }
    Ok(())
}

fn check_angle(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && (0.0..TAU).contains(&v)) {
        return Err(Error::param(format!("{name} must lie in [0, 2pi), got {v}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlurSpec {
    pub side: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub theta: f64,
}

impl GaussianBlurSpec {
    pub fn validate(&self) -> Result<()> {
        let r = KernelRanges::default();
        check_side("gaussian side", self.side, r.gaussian_side)?;
        check_real("gaussian sigma_x", self.sigma_x, r.gaussian_sigma)?;
        check_real("gaussian sigma_y", self.sigma_y, r.gaussian_sigma)?;
        check_angle("gaussian theta", self.theta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedGaussianSpec {
    pub side: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub beta: f64,
    pub theta: f64,
    /// Multiplicative noise level; weights are scaled by independent draws in
    /// `[1 - |noise_sigma - 1|, 1 + |noise_sigma - 1|]`.
    pub noise_sigma: f64,
    pub noise_enabled: bool,
    /// Seed for the per-weight noise draws when the kernel is rebuilt from a trace.
    #[serde(default)]
    pub noise_seed: u64,
}

impl GeneralizedGaussianSpec {
    pub fn validate(&self) -> Result<()> {
        let r = KernelRanges::default();
        check_side("generalized gaussian side", self.side, r.gg_side)?;
        check_real("generalized gaussian sigma_x", self.sigma_x, r.gg_sigma)?;
        check_real("generalized gaussian sigma_y", self.sigma_y, r.gg_sigma)?;
        check_real("generalized gaussian beta", self.beta, r.gg_beta)?;
        check_real("generalized gaussian noise", self.noise_sigma, r.gg_noise)?;
        check_angle("generalized gaussian theta", self.theta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionBlurSpec {
    pub side: usize,
    pub theta: f64,
    pub direction: f64,
    /// Integer kernel-center offset as `[dx, dy]`.
    pub shift: [i32; 2],
}

impl MotionBlurSpec {
    pub fn validate(&self) -> Result<()> {
        let r = KernelRanges::default();
        check_side("motion side", self.side, r.motion_side)?;
        check_angle("motion theta", self.theta)?;
        check_real("motion direction", self.direction, r.motion_direction)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefocusSpec {
    pub radius: usize,
    pub gauss_sigma: f64,
}

impl DefocusSpec {
    pub fn validate(&self) -> Result<()> {
        let r = KernelRanges::default();
        if self.radius < r.defocus_radius.0 || self.radius > r.defocus_radius.1 {
            return Err(Error::param(format!(
                "defocus radius must lie in [{}, {}], got {}",
                r.defocus_radius.0, r.defocus_radius.1, self.radius
            )));
        }
        check_real("defocus gauss_sigma", self.gauss_sigma, r.defocus_sigma)
    }

    /// Side of the Gaussian that smooths the disc: 3 up to radius 8, 5 beyond.
    pub fn companion_side(&self) -> usize {
        if self.radius <= 8 {
            3
        } else {
            5
        }
    }
}

/// Quadratic form `C^T R^T Sigma^-1 R C` at lattice offset `(x, y)`.
fn precision_form(x: f64, y: f64, sigma_x: f64, sigma_y: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let rx = c * x - s * y;
    let ry = s * x + c * y;
    rx * rx / (sigma_x * sigma_x) + ry * ry / (sigma_y * sigma_y)
}

fn lattice(side: usize, mut f: impl FnMut(f64, f64) -> f64) -> Vec<f64> {
    let r = (side / 2) as isize;
    let mut w = Vec::with_capacity(side * side);
    for y in -r..=r {
        for x in -r..=r {
            w.push(f(x as f64, y as f64));
        }
    }
    w
}

pub fn make_gaussian_kernel(spec: &GaussianBlurSpec) -> Result<KernelGrid> {
    spec.validate()?;
    gaussian_unchecked(spec.side, spec.sigma_x, spec.sigma_y, spec.theta)
}

fn gaussian_unchecked(side: usize, sx: f64, sy: f64, theta: f64) -> Result<KernelGrid> {
    let w = lattice(side, |x, y| (-0.5 * precision_form(x, y, sx, sy, theta)).exp());
    KernelGrid::normalized(side, w)
}

pub fn make_generalized_gaussian_kernel(
    spec: &GeneralizedGaussianSpec,
    rng: &mut SeededRng,
) -> Result<KernelGrid> {
    spec.validate()?;
    let mut w = lattice(spec.side, |x, y| {
        let q = precision_form(x, y, spec.sigma_x, spec.sigma_y, spec.theta);
        (-0.5 * q.powf(spec.beta)).exp()
    });
    if spec.noise_enabled {
        let spread = (spec.noise_sigma - 1.0).abs();
        for v in &mut w {
            let m = if spread > 0.0 {
                rng.random_range(1.0 - spread..=1.0 + spread)
            } else {
                1.0
            };
            *v = (*v * m).max(0.0);
        }
    }
    KernelGrid::normalized(spec.side, w)
}

/// Continuous sample points `t_n(d) * u(theta)` of the motion path, as `(x, y)`.
pub fn motion_samples(side: usize, theta: f64, direction: f64) -> Vec<(f64, f64)> {
    let k = side as f64;
    let half = (k - 1.0) / 2.0;
    let t_minus = -half * (1.0 - direction);
    let t_plus = half * (1.0 + direction);
    let (s, c) = theta.sin_cos();
    (0..side)
        .map(|n| {
            let t = t_minus + (n as f64) / (k - 1.0) * (t_plus - t_minus);
            (t * c, t * s)
        })
        .collect()
}

fn rounded_path(side: usize, theta: f64, direction: f64) -> Vec<(i64, i64)> {
    motion_samples(side, theta, direction)
        .into_iter()
        .map(|(x, y)| (x.round() as i64, y.round() as i64))
        .collect()
}

/// All integer center shifts `[dx, dy]` that keep the rasterized path in the grid.
pub fn valid_motion_shifts(side: usize, theta: f64, direction: f64) -> Vec<[i32; 2]> {
    let r = (side / 2) as i64;
    let pts = rounded_path(side, theta, direction);
    let (min_x, max_x) = pts.iter().fold((i64::MAX, i64::MIN), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (min_y, max_y) = pts.iter().fold((i64::MAX, i64::MIN), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let mut out = Vec::new();
    for dy in (-r - min_y)..=(r - max_y) {
        for dx in (-r - min_x)..=(r - max_x) {
            out.push([dx as i32, dy as i32]);
        }
    }
    out
}

pub fn make_motion_kernel(spec: &MotionBlurSpec) -> Result<KernelGrid> {
    spec.validate()?;
    let side = spec.side;
    let r = (side / 2) as i64;
    let tap = 1.0 / side as f64;
    let mut w = vec![0.0; side * side];
    for (x, y) in rounded_path(side, spec.theta, spec.direction) {
        let gx = x + i64::from(spec.shift[0]);
        let gy = y + i64::from(spec.shift[1]);
        if gx.abs() > r || gy.abs() > r {
            return Err(Error::param(format!(
                "motion path leaves the {side}x{side} grid with shift {:?}",
                spec.shift
            )));
        }
        w[((gy + r) as usize) * side + (gx + r) as usize] += tap;
    }
    KernelGrid::normalized(side, w)
}

pub fn make_defocus_kernel(spec: &DefocusSpec) -> Result<KernelGrid> {
    spec.validate()?;
    let r = spec.radius;
    let disc_side = 2 * r + 1;
    let r2 = (r * r) as f64;
    let area = PI * r2;
    let disc = lattice(disc_side, |x, y| if x * x + y * y <= r2 { 1.0 / area } else { 0.0 });

    let g = gaussian_unchecked(spec.companion_side(), spec.gauss_sigma, spec.gauss_sigma, 0.0)?;
    let gs = g.side();
    let side = disc_side + gs - 1;
    let mut w = vec![0.0; side * side];
    for dy in 0..disc_side {
        for dx in 0..disc_side {
            let d = disc[dy * disc_side + dx];
            if d == 0.0 {
                continue;
            }
            for gy in 0..gs {
                for gx in 0..gs {
                    w[(dy + gy) * side + dx + gx] += d * g.weights()[gy * gs + gx];
                }
            }
        }
    }
    KernelGrid::normalized(side, w)
}

/// One fully-resolved blur parameter record of any family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BlurSpec {
    Gaussian(GaussianBlurSpec),
    GeneralizedGaussian(GeneralizedGaussianSpec),
    Motion(MotionBlurSpec),
    Defocus(DefocusSpec),
}

impl BlurSpec {
    pub fn family(&self) -> BlurFamily {
        match self {
            BlurSpec::Gaussian(_) => BlurFamily::Gaussian,
            BlurSpec::GeneralizedGaussian(_) => BlurFamily::GeneralizedGaussian,
            BlurSpec::Motion(_) => BlurFamily::Motion,
            BlurSpec::Defocus(_) => BlurFamily::Defocus,
        }
    }

    /// Builds the kernel. Generalized-Gaussian noise is drawn from the spec's own
    /// `noise_seed`, so the result is a pure function of the record.
    pub fn kernel(&self) -> Result<KernelGrid> {
        match self {
            BlurSpec::Gaussian(s) => make_gaussian_kernel(s),
            BlurSpec::GeneralizedGaussian(s) => {
                make_generalized_gaussian_kernel(s, &mut seeded(s.noise_seed))
            }
            BlurSpec::Motion(s) => make_motion_kernel(s),
            BlurSpec::Defocus(s) => make_defocus_kernel(s),
        }
    }

    /// Space-separated `key=value` summary used in kernel dumps.
    pub fn describe(&self) -> String {
        match self {
            BlurSpec::Gaussian(s) => format!(
                "side={} sigma_x={} sigma_y={} theta={}",
                s.side, s.sigma_x, s.sigma_y, s.theta
            ),
            BlurSpec::GeneralizedGaussian(s) => format!(
                "side={} sigma_x={} sigma_y={} beta={} theta={} noise_sigma={} noise_enabled={} noise_seed={}",
                s.side, s.sigma_x, s.sigma_y, s.beta, s.theta, s.noise_sigma, s.noise_enabled, s.noise_seed
            ),
            BlurSpec::Motion(s) => format!(
                "side={} theta={} direction={} shift={},{}",
                s.side, s.theta, s.direction, s.shift[0], s.shift[1]
            ),
            BlurSpec::Defocus(s) => format!("radius={} gauss_sigma={}", s.radius, s.gauss_sigma),
        }
    }

    /// Overrides a single named parameter, e.g. `("sigma_x", "1.5")`.
    pub fn set_param(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::param(format!("cannot parse `{v}` for `{key}`")))
        }
        let family = self.family();
        let unknown = || Error::param(format!("unknown parameter `{key}` for {family}"));
        match self {
            BlurSpec::Gaussian(s) => match key {
                "side" => s.side = num(key, value)?,
                "sigma_x" => s.sigma_x = num(key, value)?,
                "sigma_y" => s.sigma_y = num(key, value)?,
                "theta" => s.theta = num(key, value)?,
                _ => return Err(unknown()),
            },
            BlurSpec::GeneralizedGaussian(s) => match key {
                "side" => s.side = num(key, value)?,
                "sigma_x" => s.sigma_x = num(key, value)?,
                "sigma_y" => s.sigma_y = num(key, value)?,
                "beta" => s.beta = num(key, value)?,
                "theta" => s.theta = num(key, value)?,
                "noise_sigma" => s.noise_sigma = num(key, value)?,
                "noise_enabled" => s.noise_enabled = num(key, value)?,
                "noise_seed" => s.noise_seed = num(key, value)?,
                _ => return Err(unknown()),
            },
            BlurSpec::Motion(s) => match key {
                "side" => s.side = num(key, value)?,
                "theta" => s.theta = num(key, value)?,
                "direction" => s.direction = num(key, value)?,
                "shift" => {
                    let parts: Vec<&str> = value.split([',', ';', ':']).collect();
                    if parts.len() != 2 {
                        return Err(Error::param("shift expects `dx:dy`"));
                    }
                    s.shift = [num(key, parts[0])?, num(key, parts[1])?];
                }
                _ => return Err(unknown()),
            },
            BlurSpec::Defocus(s) => match key {
                "radius" => s.radius = num(key, value)?,
                "gauss_sigma" => s.gauss_sigma = num(key, value)?,
                _ => return Err(unknown()),
            },
        }
        Ok(())
    }
}

/// Samples a parameter record for `family` from the default ranges.
pub fn sample_blur_spec(family: BlurFamily, rng: &mut SeededRng) -> BlurSpec {
    sample_blur_spec_in(family, &KernelRanges::default(), rng)
}

pub fn sample_blur_spec_in(family: BlurFamily, ranges: &KernelRanges, rng: &mut SeededRng) -> BlurSpec {
    match family {
        BlurFamily::Gaussian => BlurSpec::Gaussian(GaussianBlurSpec {
            side: sample_odd(rng, ranges.gaussian_side),
            sigma_x: sample_real(rng, ranges.gaussian_sigma),
            sigma_y: sample_real(rng, ranges.gaussian_sigma),
            theta: sample_angle(rng),
        }),
        BlurFamily::GeneralizedGaussian => BlurSpec::GeneralizedGaussian(GeneralizedGaussianSpec {
            side: sample_odd(rng, ranges.gg_side),
            sigma_x: sample_real(rng, ranges.gg_sigma),
            sigma_y: sample_real(rng, ranges.gg_sigma),
            beta: sample_real(rng, ranges.gg_beta),
            theta: sample_angle(rng),
            noise_sigma: sample_real(rng, ranges.gg_noise),
            noise_enabled: true,
            noise_seed: rng.random(),
        }),
        BlurFamily::Motion => loop {
            let side = sample_odd(rng, ranges.motion_side);
            let theta = sample_angle(rng);
            let direction = sample_real(rng, ranges.motion_direction);
            let shifts = valid_motion_shifts(side, theta, direction);
            // Empty only when rounding ties widen the path past the grid.
            if !shifts.is_empty() {
                let shift = shifts[rng.random_range(0..shifts.len())];
                break BlurSpec::Motion(MotionBlurSpec {
                    side,
                    theta,
                    direction,
                    shift,
                });
            }
        },
        BlurFamily::Defocus => BlurSpec::Defocus(DefocusSpec {
            radius: sample_odd(rng, ranges.defocus_radius),
            gauss_sigma: sample_real(rng, ranges.defocus_sigma),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn gauss(side: usize, sx: f64, sy: f64, theta: f64) -> KernelGrid {
        make_gaussian_kernel(&GaussianBlurSpec {
            side,
            sigma_x: sx,
            sigma_y: sy,
            theta,
        })
        .unwrap()
    }

    #[test]
    fn isotropic_gaussian_ignores_theta() {
        let a = gauss(3, 0.5, 0.5, 0.0);
        let b = gauss(3, 0.5, 0.5, PI / 3.0);
        assert!(a.max_abs_diff(&b) <= 1e-12);
        assert!((a.sum() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn quarter_turn_transposes_anisotropic_gaussian() {
        let a = gauss(5, 2.0, 0.3, 0.0);
        let b = gauss(5, 2.0, 0.3, FRAC_PI_2);
        assert!(a.max_abs_diff(&b.transposed()) <= 1e-12);
        // Direct evaluation of the closed form at theta = 0: exp(-x^2/8 - y^2/0.18).
        let raw: Vec<f64> = (-2..=2)
            .flat_map(|y| (-2..=2).map(move |x| (x as f64, y as f64)))
            .map(|(x, y)| (-0.5 * (x * x / 4.0 + y * y / 0.09)).exp())
            .collect();
        let z: f64 = raw.iter().sum();
        for (w, r) in a.weights().iter().zip(&raw) {
            assert!((w - r / z).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_rejects_bad_parameters() {
        let bad = [
            GaussianBlurSpec { side: 4, sigma_x: 1.0, sigma_y: 1.0, theta: 0.0 },
            GaussianBlurSpec { side: 23, sigma_x: 1.0, sigma_y: 1.0, theta: 0.0 },
            GaussianBlurSpec { side: 5, sigma_x: 0.05, sigma_y: 1.0, theta: 0.0 },
            GaussianBlurSpec { side: 5, sigma_x: 1.0, sigma_y: 3.0, theta: 0.0 },
            GaussianBlurSpec { side: 5, sigma_x: 1.0, sigma_y: 1.0, theta: TAU },
        ];
        for spec in bad {
            assert!(matches!(make_gaussian_kernel(&spec), Err(Error::Parameter(_))), "{spec:?}");
        }
    }

    fn gg(beta: f64, noise: bool) -> GeneralizedGaussianSpec {
        GeneralizedGaussianSpec {
            side: 7,
            sigma_x: 1.2,
            sigma_y: 0.8,
            beta,
            theta: 0.7,
            noise_sigma: 1.1,
            noise_enabled: noise,
            noise_seed: 11,
        }
    }

    #[test]
    fn generalized_gaussian_reduces_to_gaussian_at_beta_one() {
        let a = make_generalized_gaussian_kernel(&gg(1.0, false), &mut seeded(0)).unwrap();
        let b = gauss(7, 1.2, 0.8, 0.7);
        assert!(a.max_abs_diff(&b) <= 1e-9);
    }

    #[test]
    fn lighter_tails_concentrate_mass() {
        let mut spec = gg(0.5, false);
        spec.sigma_x = 1.5;
        spec.sigma_y = 1.5;
        let heavy = make_generalized_gaussian_kernel(&spec, &mut seeded(0)).unwrap();
        spec.beta = 4.0;
        let light = make_generalized_gaussian_kernel(&spec, &mut seeded(0)).unwrap();
        assert!(light.center_weight() > heavy.center_weight());
    }

    #[test]
    fn kernel_noise_is_seeded() {
        let a = make_generalized_gaussian_kernel(&gg(2.0, true), &mut seeded(5)).unwrap();
        let b = make_generalized_gaussian_kernel(&gg(2.0, true), &mut seeded(5)).unwrap();
        let clean = make_generalized_gaussian_kernel(&gg(2.0, false), &mut seeded(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.max_abs_diff(&clean) > 0.0);
        // Multipliers stay within +-10% before renormalization.
        let ratio: Vec<f64> = a.weights().iter().zip(clean.weights()).map(|(n, c)| n / c).collect();
        let (lo, hi) = ratio.iter().fold((f64::MAX, f64::MIN), |m, r| (m.0.min(*r), m.1.max(*r)));
        assert!(hi / lo <= 1.1 / 0.9 + 1e-12);
    }

    fn motion(side: usize, theta: f64, direction: f64, shift: [i32; 2]) -> Result<KernelGrid> {
        make_motion_kernel(&MotionBlurSpec { side, theta, direction, shift })
    }

    #[test]
    fn three_tap_horizontal_line() {
        let k = motion(3, 0.0, 0.0, [0, 0]).unwrap();
        let third = 1.0 / 3.0;
        let expected = [0.0, 0.0, 0.0, third, third, third, 0.0, 0.0, 0.0];
        for (w, e) in k.weights().iter().zip(expected) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    fn centered_motion_is_point_symmetric() {
        for theta in [0.0, 0.3, 1.1, 2.5, 4.0, 5.9] {
            for side in [3, 7, 15, 21] {
                let k = motion(side, theta, 0.0, [0, 0]).unwrap();
                assert!(k.max_abs_diff(&k.rotated_180()) <= 1e-12);
            }
        }
    }

    #[test]
    fn one_sided_motion_path() {
        let pts = motion_samples(9, 0.4, 1.0);
        assert_eq!(pts[0], (0.0, 0.0));
        let (c, s) = (0.4f64.cos(), 0.4f64.sin());
        // Every sample lies on the ray t * u(theta) with t >= 0.
        assert!(pts.iter().all(|(x, y)| x * c + y * s >= 0.0));
        // Without a shift the path overruns the grid; some shift brings it back.
        assert!(motion(9, 0.4, 1.0, [0, 0]).is_err());
        let shift = valid_motion_shifts(9, 0.4, 1.0)[0];
        assert!(motion(9, 0.4, 1.0, shift).is_ok());
    }

    #[test]
    fn defocus_companion_switches_at_eight() {
        for (r, side) in [(3, 3), (8, 3), (9, 5), (21, 5)] {
            let spec = DefocusSpec { radius: r, gauss_sigma: 0.3 };
            assert_eq!(spec.companion_side(), side);
            let k = make_defocus_kernel(&spec).unwrap();
            assert_eq!(k.side(), 2 * r + side);
            assert!((k.sum() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn sharp_defocus_is_disc_shaped() {
        let k = make_defocus_kernel(&DefocusSpec { radius: 3, gauss_sigma: 0.1 }).unwrap();
        let r = k.radius() as isize;
        let mut inside = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                if ((dx * dx + dy * dy) as f64).sqrt() <= 4.0 {
                    inside += k.at(dy, dx);
                }
            }
        }
        assert!(inside >= 0.99, "mass within radius 4 = {inside}");
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        for family in BlurFamily::ALL {
            let a = sample_blur_spec(family, &mut seeded(42));
            let b = sample_blur_spec(family, &mut seeded(42));
            assert_eq!(a, b);
            assert_eq!(a.family(), family);
            a.kernel().unwrap();
        }
        let mut rng = seeded(1);
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for _ in 0..10_000 {
            if let BlurSpec::Gaussian(s) = sample_blur_spec(BlurFamily::Gaussian, &mut rng) {
                for v in [s.sigma_x, s.sigma_y] {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        assert!(lo >= 0.1 && hi <= 2.8 && lo < 0.2 && hi > 2.7);

        let (mut neg, mut pos) = (false, false);
        for _ in 0..10_000 {
            if let BlurSpec::Motion(s) = sample_blur_spec(BlurFamily::Motion, &mut rng) {
                neg |= s.direction < 0.0;
                pos |= s.direction > 0.0;
            }
        }
        assert!(neg && pos);
    }

    #[test]
    fn narrowed_ranges_validate() {
        let mut r = KernelRanges::default();
        r.validate().unwrap();
        r.gaussian_side = (5, 9);
        r.validate().unwrap();
        r.gaussian_sigma = (0.05, 1.0);
        assert!(r.validate().is_err());
        let mut r = KernelRanges::default();
        r.motion_side = (4, 4);
        assert!(r.validate().is_err());
    }

    #[test]
    fn set_param_overrides() {
        let mut s = sample_blur_spec(BlurFamily::Motion, &mut seeded(3));
        s.set_param("side", "3").unwrap();
        s.set_param("theta", "0").unwrap();
        s.set_param("direction", "0").unwrap();
        s.set_param("shift", "0:0").unwrap();
        assert_eq!(s.kernel().unwrap(), motion(3, 0.0, 0.0, [0, 0]).unwrap());
        assert!(s.set_param("beta", "1").is_err());
    }
}
