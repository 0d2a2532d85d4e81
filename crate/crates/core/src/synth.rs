//! Seeded synthetic segmentation data: bright elliptical blobs on a smooth
//! textured background, with dimmer rectangular distractors.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::patch::{ImagePatch, MaskPatch};
use crate::rng::{self, Rng, RngExt};

/// Generator parameters. Intensities are on a 0..=255 scale and mapped onto
/// the configured quantization levels.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BlobConfig {
    pub size: usize,
    pub levels: u16,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    pub max_distractors: usize,
    pub background_level: f64,
    pub object_level: f64,
    pub distractor_level: f64,
    pub texture_amplitude: f64,
    /// Spatial frequency of the background texture, in cycles per pixel.
    pub texture_frequency: f64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            size: 32,
            levels: 256,
            min_objects: 1,
            max_objects: 3,
            min_radius: 3.0,
            max_radius: 7.0,
            max_distractors: 3,
            background_level: 80.0,
            object_level: 180.0,
            distractor_level: 130.0,
            texture_amplitude: 15.0,
            texture_frequency: 0.08,
            noise: 2.0,
        }
    }
}

impl BlobConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !(2..=256).contains(&self.levels) {
            return Err(Error::Invalid("blob generator needs size > 0 and levels in 2..=256".into()));
        }
        if self.min_objects > self.max_objects || !(0.0 < self.min_radius && self.min_radius <= self.max_radius) {
            return Err(Error::Invalid("blob generator object count or radius range is inverted".into()));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
}

/// One image/mask pair, fully determined by `seed`.
pub fn generate_sample(cfg: &BlobConfig, seed: u64) -> Result<(ImagePatch, MaskPatch)> {
    cfg.validate()?;
    let mut rng = rng::seeded(seed);
    let n = cfg.size;
    let mut img = vec![cfg.background_level; n * n];

    for _ in 0..3 {
        let theta = rng.gen_range(0.0..PI);
        let f = cfg.texture_frequency * rng.gen_range(0.5..1.5);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let (fx, fy) = (f * libm::cos(theta), f * libm::sin(theta));
        for y in 0..n {
            for x in 0..n {
                let arg = 2.0 * PI * (fx * x as f64 + fy * y as f64) + phase;
                img[y * n + x] += cfg.texture_amplitude / 3.0 * libm::sin(arg);
            }
        }
    }

    let distractors = rng.gen_range(0..=cfg.max_distractors);
    for _ in 0..distractors {
        let (w, h) = (rng.gen_range(2..=5usize).min(n), rng.gen_range(2..=5usize).min(n));
        let (x0, y0) = (rng.gen_range(0..=n - w), rng.gen_range(0..=n - h));
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img[y * n + x] = cfg.distractor_level;
            }
        }
    }

    let mut mask = vec![0u8; n * n];
    let objects = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    for _ in 0..objects {
        let rx = rng.gen_range(cfg.min_radius..=cfg.max_radius);
        let ry = rng.gen_range(cfg.min_radius..=cfg.max_radius);
        let angle = rng.gen_range(0.0..PI);
        let cx = rng.gen_range(0.0..n as f64);
        let cy = rng.gen_range(0.0..n as f64);
        let (ca, sa) = (libm::cos(angle), libm::sin(angle));
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let u = (dx * ca + dy * sa) / rx;
                let v = (-dx * sa + dy * ca) / ry;
                let d = libm::sqrt(u * u + v * v);
                // about one pixel of soft edge around the boundary
                let alpha = ((1.0 - d) * rx.min(ry) + 0.5).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    let i = y * n + x;
                    img[i] = img[i] * (1.0 - alpha) + cfg.object_level * alpha;
                }
                if d <= 1.0 {
                    mask[y * n + x] = 1;
                }
            }
        }
    }

    let top = f64::from(cfg.levels - 1);
    let data = img
        .iter()
        .map(|&v| {
            let v = v + cfg.noise * gaussian(&mut rng);
            libm::round(v * top / 255.0).clamp(0.0, top) as u8
        })
        .collect();
    Ok((ImagePatch::gray(n, n, cfg.levels, data)?, MaskPatch::new(n, n, mask)?))
}

/// `count` samples; sample `i` uses a seed derived from `(seed, i)`.
pub fn generate_set(cfg: &BlobConfig, count: usize, seed: u64) -> Result<Vec<(ImagePatch, MaskPatch)>> {
    (0..count).map(|i| generate_sample(cfg, rng::derive_seed(seed, i as u64))).collect()
}
