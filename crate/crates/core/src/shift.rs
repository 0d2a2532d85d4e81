//! Controllable synthetic covariate shifts.
//!
//! Every generator is the identity at severity 0 and re-quantizes its output
//! by rounding to the nearest level and clamping to `[0, Q - 1]`. Masks are
//! never touched.

use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::patch::ImagePatch;
use crate::rng::{self, RngExt};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ShiftKind {
    /// Periodic sign pattern times `severity` quantization steps.
    ImperceptibleNoise,
    /// Adds `severity` quantization steps to every pixel.
    IntensityShift,
    /// Scales deviations from mid-gray by `1 / (1 + severity)`.
    Contrast,
    /// Gaussian blur with standard deviation `severity` pixels.
    Blur,
    /// Independent uniform jitter in `[-severity, severity]` steps.
    QuantizationJitter,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 5] =
        [Self::ImperceptibleNoise, Self::IntensityShift, Self::Contrast, Self::Blur, Self::QuantizationJitter];

    pub fn name(self) -> &'static str {
        match self {
            Self::ImperceptibleNoise => "imperceptible-noise",
            Self::IntensityShift => "intensity-shift",
            Self::Contrast => "contrast",
            Self::Blur => "blur",
            Self::QuantizationJitter => "quantization-jitter",
        }
    }
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown shift kind `{s}`")))
    }
}

impl core::fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub severity: f64,
    pub seed: u64,
}

/// Side length of the periodic sign tile used by the imperceptible-noise generator.
const SIGN_PERIOD: usize = 4;

impl ShiftSpec {
    pub fn new(kind: ShiftKind, severity: f64, seed: u64) -> Result<Self> {
        let spec = Self { kind, severity, seed };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.severity.is_finite() && self.severity >= 0.0) {
            return Err(Error::Invalid(format!("severity must be finite and >= 0, got {}", self.severity)));
        }
        Ok(())
    }

    /// Shifted copy of `patch`; `index` selects the per-patch random stream.
    pub fn apply_one(&self, patch: &ImagePatch, index: usize) -> Result<ImagePatch> {
        self.validate()?;
        if self.severity == 0.0 {
            return Ok(patch.clone());
        }
        let top = f64::from(patch.levels() - 1);
        let values: Vec<f64> = patch.data().iter().map(|&v| f64::from(v)).collect();
        let s = self.severity;
        let (h, w) = (patch.height(), patch.width());
        let out: Vec<f64> = match self.kind {
            ShiftKind::IntensityShift => values.iter().map(|v| v + s).collect(),
            ShiftKind::Contrast => {
                let mid = top / 2.0;
                values.iter().map(|v| mid + (v - mid) / (1.0 + s)).collect()
            }
            ShiftKind::QuantizationJitter => {
                let mut rng = rng::seeded(rng::derive_seed(self.seed, index as u64));
                values.iter().map(|v| v + rng.gen_range(-s..=s)).collect()
            }
            ShiftKind::ImperceptibleNoise => {
                let mut tile_rng = rng::seeded(self.seed);
                let tile: Vec<f64> = (0..SIGN_PERIOD * SIGN_PERIOD)
                    .map(|_| if tile_rng.gen::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                let mut rng = rng::seeded(rng::derive_seed(self.seed, index as u64));
                let (oy, ox) = (rng.gen_range(0..SIGN_PERIOD), rng.gen_range(0..SIGN_PERIOD));
                values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let (y, x) = ((i / w) % h, i % w);
                        let sign = tile[((y + oy) % SIGN_PERIOD) * SIGN_PERIOD + (x + ox) % SIGN_PERIOD];
                        v + s * sign
                    })
                    .collect()
            }
            ShiftKind::Blur => gaussian_blur(&values, patch.channels(), h, w, s),
        };
        let data = out.iter().map(|&v| libm::round(v).clamp(0.0, top) as u8).collect();
        patch.with_data(data)
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn gaussian_blur(values: &[f64], channels: usize, h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(3.0 * sigma) as isize;
    let mut kernel: Vec<f64> =
        (-radius..=radius).map(|d| libm::exp(-((d * d) as f64) / (2.0 * sigma * sigma))).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let mut tmp = alloc::vec![0.0; values.len()];
    let mut out = alloc::vec![0.0; values.len()];
    for c in 0..channels {
        let plane = c * h * w;
        for y in 0..h {
            for x in 0..w {
                tmp[plane + y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, k)| k * values[plane + y * w + reflect(x as isize + j as isize - radius, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                out[plane + y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, k)| k * tmp[plane + reflect(y as isize + j as isize - radius, h) * w + x])
                    .sum();
            }
        }
    }
    out
}

/// Applies `spec` to every patch (patch `i` uses stream `i`).
pub fn apply_shift(spec: &ShiftSpec, patches: &[ImagePatch]) -> Result<Vec<ImagePatch>> {
    patches.iter().enumerate().map(|(i, p)| spec.apply_one(p, i)).collect()
}

/// One shifted copy of `patches` per severity. `severities` must start at 0
/// and be non-decreasing; copy `k` uses a seed derived from `(master_seed, k)`.
pub fn severity_sweep(
    kind: ShiftKind,
    severities: &[f64],
    patches: &[ImagePatch],
    master_seed: u64,
) -> Result<Vec<(f64, Vec<ImagePatch>)>> {
    check_severities(severities)?;
    severities
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let spec = ShiftSpec::new(kind, s, rng::derive_seed(master_seed, k as u64))?;
            Ok((s, apply_shift(&spec, patches)?))
        })
        .collect()
}

pub fn check_severities(severities: &[f64]) -> Result<()> {
    match severities.first() {
        None => return Err(Error::Empty("severity list")),
        Some(&s) if s != 0.0 => {
            return Err(Error::Invalid(format!("severity sweep must start at 0, got {s}")));
        }
        _ => {}
    }
    if severities.windows(2).any(|p| !(p[0] <= p[1])) {
        return Err(Error::Invalid(format!("severities not sorted ascending: {severities:?}")));
    }
    Ok(())
}
