//! Autoregressive pixel density model with exact log-likelihoods.
//!
//! A patch's probability factorizes over sub-pixels in raster order,
//! `log p(x) = sum_i log p(x_i | x_1, ..., x_{i-1})`. The conditionals are
//! produced by a stack of masked convolutions: the first layer uses a type-A
//! mask (no access to the current sub-pixel), later layers use type-B masks
//! (access to the current position's already-allowed features). Each
//! conditional is a categorical softmax over the `Q` quantization levels, so
//! the model is exactly normalized.
//!
//! Multi-channel patches are handled by channel factorization: channel `c`
//! of a pixel is conditioned on all earlier pixels and on channels `< c` of
//! the same pixel.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

use crate::empirical::EmpiricalDistribution;
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::patch::ImagePatch;
use crate::rng::{self, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Architecture of a [`PixelCnn`].
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DensityConfig {
    /// Quantization levels `Q`.
    pub levels: u16,
    pub channels: usize,
    pub hidden: usize,
    /// Residual mask-B blocks after the mask-A input layer.
    pub blocks: usize,
    pub input_kernel: usize,
    pub block_kernel: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self { levels: 256, channels: 1, hidden: 32, blocks: 4, input_kernel: 7, block_kernel: 3 }
    }
}

impl DensityConfig {
    fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.levels) {
            return Err(Error::Invalid(format!("levels must be in 2..=256, got {}", self.levels)));
        }
        if self.channels == 0 || self.hidden < self.channels {
            return Err(Error::Invalid(format!(
                "need 1 <= channels <= hidden, got channels {} hidden {}",
                self.channels, self.hidden
            )));
        }
        if self.input_kernel.is_multiple_of(2) || self.block_kernel.is_multiple_of(2) {
            return Err(Error::Invalid("kernel sizes must be odd".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// Excludes the current sub-pixel.
    A,
    /// Includes the current position's features of the same or earlier channel groups.
    B,
}

fn channel_group(index: usize, count: usize, groups: usize) -> usize {
    index * groups / count
}

/// Causal mask for a `[out, in, kh, kw]` kernel over `groups` image channels.
///
/// Taps strictly before the centre in raster order are open; taps after it
/// are closed. At the centre, input group `gi` feeds output group `go` when
/// `gi < go` (mask A) or `gi <= go` (mask B).
pub fn causal_mask(kind: MaskKind, out_ch: usize, in_ch: usize, kh: usize, kw: usize, groups: usize) -> Tensor {
    let (cy, cx) = (kh / 2, kw / 2);
    let mut data = vec![0.0; out_ch * in_ch * kh * kw];
    for o in 0..out_ch {
        let go = channel_group(o, out_ch, groups);
        for i in 0..in_ch {
            let gi = channel_group(i, in_ch, groups);
            for y in 0..kh {
                for x in 0..kw {
                    let open = if y < cy || (y == cy && x < cx) {
                        true
                    } else if y == cy && x == cx {
                        match kind {
                            MaskKind::A => gi < go,
                            MaskKind::B => gi <= go,
                        }
                    } else {
                        false
                    };
                    if open {
                        data[((o * in_ch + i) * kh + y) * kw + x] = 1.0;
                    }
                }
            }
        }
    }
    Tensor::new(vec![out_ch, in_ch, kh, kw], data).expect("mask shape")
}

/// Masked-convolution autoregressive density model.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelCnn {
    config: DensityConfig,
    params: Vec<(String, Tensor)>,
    masks: Vec<Option<Tensor>>,
}

/// Log-likelihood of one patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LikelihoodSample {
    pub patch_id: usize,
    /// Total log-likelihood in nats; never positive.
    pub log_likelihood: f64,
    /// `-log_likelihood / (dims * ln 2)`; never negative.
    pub bits_per_dim: f64,
}

/// Statistic used when a set of patches is summarized as a distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LikelihoodStatistic {
    #[default]
    BitsPerDim,
    TotalNats,
}

impl LikelihoodStatistic {
    pub fn of(self, s: &LikelihoodSample) -> f64 {
        match self {
            Self::BitsPerDim => s.bits_per_dim,
            Self::TotalNats => s.log_likelihood,
        }
    }
}

/// Optimization settings shared by both trainable models.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Per-epoch negative log-likelihood in bits per dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityCurve {
    pub train_bpd: Vec<f64>,
    /// Empty when no validation patches were supplied.
    pub valid_bpd: Vec<f64>,
}

const SCORE_BATCH: usize = 64;

impl PixelCnn {
    pub fn new(config: DensityConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let (g, h, q) = (config.channels, config.hidden, config.levels as usize);
        let (ki, kb) = (config.input_kernel, config.block_kernel);
        let mut params = Vec::new();
        let mut masks = Vec::new();
        let mut layer = |name: &str, mask: Tensor, rng: &mut Rng, gain: f64| {
            let shape = mask.shape().to_vec();
            let open = mask.data().iter().filter(|&&m| m != 0.0).count().max(1);
            let fan_in = (open / shape[0]).max(1) as f64;
            let bound = gain * libm::sqrt(6.0 / fan_in);
            params.push((format!("{name}.weight"), Tensor::uniform(&shape, bound, rng)));
            params.push((format!("{name}.bias"), Tensor::zeros(&shape[..1])));
            let all_open = mask.data().iter().all(|&m| m == 1.0);
            masks.push(if all_open { None } else { Some(mask) });
            masks.push(None);
        };
        layer("input", causal_mask(MaskKind::A, h, g, ki, ki, g), &mut rng, 1.0);
        for b in 0..config.blocks {
            layer(&format!("block{b}"), causal_mask(MaskKind::B, h, h, kb, kb, g), &mut rng, 0.5);
        }
        layer("hidden", causal_mask(MaskKind::B, h, h, 1, 1, g), &mut rng, 1.0);
        layer("logits", causal_mask(MaskKind::B, g * q, h, 1, 1, g), &mut rng, 0.1);
        Ok(Self { config, params, masks })
    }

    /// Rebuilds a model from named tensors, checking names and shapes.
    pub fn from_named(config: DensityConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.load_named(tensors)?;
        Ok(model)
    }

    pub fn config(&self) -> &DensityConfig {
        &self.config
    }

    pub fn named_tensors(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn load_named(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        load_into(&mut self.params, tensors)
    }

    /// Sets the output layer to zero, making every conditional uniform.
    pub fn zero_logits(&mut self) {
        let n = self.params.len();
        for (_, t) in &mut self.params[n - 2..] {
            t.data_mut().fill(0.0);
        }
    }

    fn check_batch(&self, patches: &[ImagePatch]) -> Result<(usize, usize)> {
        let first = patches.first().ok_or(Error::Empty("patch set"))?;
        let (h, w) = (first.height(), first.width());
        for p in patches {
            if p.levels() != self.config.levels {
                return Err(Error::Quantization { expected: self.config.levels, found: p.levels() });
            }
            if p.channels() != self.config.channels || p.height() != h || p.width() != w {
                return Err(Error::Invalid(format!(
                    "patch geometry {}x{}x{} differs from batch {}x{h}x{w}",
                    p.channels(),
                    p.height(),
                    p.width(),
                    self.config.channels
                )));
            }
        }
        Ok((h, w))
    }

    fn input_tensor(&self, patches: &[ImagePatch], h: usize, w: usize) -> Tensor {
        let scale = 2.0 / f64::from(self.config.levels - 1);
        let data = patches.iter().flat_map(|p| p.data().iter().map(move |&v| f64::from(v) * scale - 1.0)).collect();
        Tensor::new(vec![patches.len(), self.config.channels, h, w], data).expect("batch shape")
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<Var> {
        let mut layers = params.chunks(2).zip(self.masks.iter().step_by(2));
        let conv = |tape: &mut Tape, x: Var, (p, mask): (&[Var], &Option<Tensor>)| -> Result<Var> {
            let k = tape.value(p[0]).shape()[2];
            let y = tape.conv2d(x, p[0], mask.as_ref(), k / 2)?;
            tape.add_bias(y, p[1])
        };
        let mut h = conv(tape, input, layers.next().expect("input layer"))?;
        for _ in 0..self.config.blocks {
            let r = tape.relu(h);
            let c = conv(tape, r, layers.next().expect("block layer"))?;
            h = tape.add(h, c)?;
        }
        let r = tape.relu(h);
        let o = conv(tape, r, layers.next().expect("hidden layer"))?;
        let r = tape.relu(o);
        conv(tape, r, layers.next().expect("logits layer"))
    }

    /// Conditional logits `[N, channels * Q, H, W]` for a batch of patches.
    pub fn logits(&self, patches: &[ImagePatch]) -> Result<Tensor> {
        let (h, w) = self.check_batch(patches)?;
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let input = tape.constant(self.input_tensor(patches, h, w));
        let out = self.forward(&mut tape, &params, input)?;
        Ok(tape.value(out).clone())
    }

    /// Exact log-likelihood of every patch, in input order.
    pub fn log_likelihoods(&self, patches: &[ImagePatch]) -> Result<Vec<LikelihoodSample>> {
        self.check_batch(patches)?;
        let q = self.config.levels as usize;
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(SCORE_BATCH) {
            let logits = self.logits(chunk)?;
            let per = logits.numel() / chunk.len();
            for (p, l) in chunk.iter().zip(logits.data().chunks(per)) {
                let ll = patch_log_likelihood(l, p.data(), q, p.height() * p.width()).min(0.0);
                let id = out.len();
                out.push(LikelihoodSample {
                    patch_id: id,
                    log_likelihood: ll,
                    bits_per_dim: -ll / (p.dims() as f64 * LN_2),
                });
            }
        }
        Ok(out)
    }

    pub fn log_likelihood(&self, patch: &ImagePatch) -> Result<LikelihoodSample> {
        Ok(self.log_likelihoods(core::slice::from_ref(patch))?[0])
    }

    /// Mean negative log-likelihood in bits per dimension.
    pub fn mean_bpd(&self, patches: &[ImagePatch]) -> Result<f64> {
        let s = self.log_likelihoods(patches)?;
        Ok(s.iter().map(|s| s.bits_per_dim).sum::<f64>() / s.len() as f64)
    }
}

pub(crate) fn load_into(params: &mut [(String, Tensor)], tensors: Vec<(String, Tensor)>) -> Result<()> {
    if tensors.len() != params.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {}", params.len(), tensors.len())));
    }
    for ((name, slot), (got_name, t)) in params.iter_mut().zip(tensors) {
        if *name != got_name {
            return Err(Error::Checkpoint(format!("expected tensor `{name}`, found `{got_name}`")));
        }
        if slot.shape() != t.shape() {
            return Err(Error::Checkpoint(format!("tensor `{name}` has shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = t;
    }
    Ok(())
}

/// Sum of log-softmax terms for one patch: `logits` is planar
/// `[G][Q][spatial]`, `values` is planar `[G][spatial]`.
pub(crate) fn patch_log_likelihood(logits: &[f64], values: &[u8], q: usize, spatial: usize) -> f64 {
    let mut total = 0.0;
    for (pos, &v) in values.iter().enumerate() {
        let (g, s) = (pos / spatial, pos % spatial);
        let base = g * q * spatial + s;
        let mx = (0..q).map(|k| logits[base + k * spatial]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..q).map(|k| libm::exp(logits[base + k * spatial] - mx)).sum();
        total += logits[base + v as usize * spatial] - mx - libm::log(z);
    }
    total
}

/// Trains `model` by minimizing the mean per-sub-pixel negative
/// log-likelihood with Adam.
///
/// Returns the per-epoch training NLL (averaged over the epoch's batches) and,
/// when `valid` is non-empty, the NLL on `valid` after each epoch.
pub fn train_density(
    model: &mut PixelCnn,
    train: &[ImagePatch],
    valid: &[ImagePatch],
    cfg: &TrainConfig,
) -> Result<DensityCurve> {
    let (h, w) = model.check_batch(train)?;
    if !valid.is_empty() {
        model.check_batch(valid)?;
    }
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let q = model.config.levels as usize;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut state = AdamState::default();
    let mut rng = rng::seeded(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = DensityCurve::default();
    for epoch in 0..cfg.epochs {
        rng::shuffle(&mut order, &mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<ImagePatch> = idx.iter().map(|&i| train[i].clone()).collect();
            let mut tape = Tape::new();
            let vars: Vec<Var> = model.params.iter().map(|(_, t)| tape.leaf(t.clone(), true)).collect();
            let input = tape.constant(model.input_tensor(&batch, h, w));
            let logits = model.forward(&mut tape, &vars, input)?;
            let targets: Vec<u32> = batch.iter().flat_map(|p| p.data().iter().map(|&v| u32::from(v))).collect();
            let loss = tape.cross_entropy(logits, &targets, q)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numerical(format!("non-finite density loss at epoch {epoch}, step {step}")));
            }
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v).expect("parameter gradient")).collect();
            let mut params: Vec<Tensor> = model.params.iter().map(|(_, t)| t.clone()).collect();
            adam_step(&mut params, &grads, &mut state, &adam)?;
            for ((_, slot), p) in model.params.iter_mut().zip(params) {
                *slot = p;
            }
            sum += value * batch.len() as f64;
            count += batch.len();
        }
        curve.train_bpd.push(sum / count as f64 / LN_2);
        if !valid.is_empty() {
            curve.valid_bpd.push(model.mean_bpd(valid)?);
        }
    }
    Ok(curve)
}

/// Per-patch likelihoods of a set plus their distribution under `statistic`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    pub samples: Vec<LikelihoodSample>,
    pub distribution: EmpiricalDistribution,
}

pub fn score_set(model: &PixelCnn, patches: &[ImagePatch], statistic: LikelihoodStatistic) -> Result<ScoredSet> {
    let samples = model.log_likelihoods(patches)?;
    let values = samples.iter().map(|s| statistic.of(s)).collect();
    let distribution = EmpiricalDistribution::new(values)?;
    Ok(ScoredSet { samples, distribution })
}

/// Non-overlapping `tile x tile` decomposition in raster order of tiles.
pub fn decompose_patch(patch: &ImagePatch, tile: usize) -> Result<Vec<ImagePatch>> {
    patch.tiles(tile)
}

impl core::fmt::Display for LikelihoodStatistic {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::BitsPerDim => "bits_per_dim",
            Self::TotalNats => "total_nats",
        })
    }
}

impl LikelihoodStatistic {
    pub fn name(self) -> String {
        self.to_string()
    }
}
