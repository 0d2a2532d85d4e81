//! Small U-Net style segmentation model and pixel-level F1 scoring.
//!
//! The network has `depth` encoder stages (3x3 conv + ReLU, then 2x2 max
//! pooling), a bottleneck stage, and `depth` decoder stages (nearest
//! upsampling, skip concatenation, 3x3 conv + ReLU), followed by a 1x1 head
//! producing two class logits per pixel.
//!
//! Post-ReLU activations of every stage are exposed under stable names:
//! `enc1 .. encD`, `bottleneck`, `decD .. dec1` (decoder stage `i` mirrors
//! encoder stage `i`). Inputs are scaled to `[0, 1]` by `value / (Q - 1)`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::density::{load_into, TrainConfig};
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::patch::{ImagePatch, MaskPatch};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SegmenterConfig {
    pub levels: u16,
    pub channels: usize,
    /// Number of down/up stage pairs.
    pub depth: usize,
    pub base_channels: usize,
    pub kernel: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self { levels: 256, channels: 1, depth: 2, base_channels: 16, kernel: 3 }
    }
}

pub const HEADLINE_LAYER: &str = "bottleneck";

impl SegmenterConfig {
    /// Names of the layers whose activations are exposed, in forward order.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.depth).map(|i| format!("enc{i}")).collect();
        names.push(HEADLINE_LAYER.to_string());
        names.extend((1..=self.depth).rev().map(|i| format!("dec{i}")));
        names
    }

    /// Filter count of each exposed layer, aligned with [`layer_names`](Self::layer_names).
    pub fn layer_widths(&self) -> Vec<usize> {
        let b = self.base_channels;
        let mut w: Vec<usize> = (0..self.depth).map(|i| b << i).collect();
        w.push(b << self.depth);
        w.extend((0..self.depth).rev().map(|i| b << i));
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmenter {
    config: SegmenterConfig,
    params: Vec<(String, Tensor)>,
}

/// Forward-pass outputs: class logits `[N, 2, H, W]` and every exposed
/// activation `[N, K, h, w]` in forward order.
#[derive(Clone, Debug)]
pub struct SegmenterOutput {
    pub logits: Tensor,
    pub activations: Vec<(String, Tensor)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskCurve {
    /// Mean pixel cross-entropy per epoch, in nats.
    pub train_loss: Vec<f64>,
    /// Pooled validation F1 per epoch; empty without validation data.
    pub valid_f1: Vec<F1Score>,
}

impl Segmenter {
    pub fn new(config: SegmenterConfig, seed: u64) -> Result<Self> {
        if config.channels == 0 || config.base_channels == 0 || config.kernel.is_multiple_of(2) {
            return Err(Error::Invalid(format!("invalid segmenter config {config:?}")));
        }
        let mut rng = rng::seeded(seed);
        let widths = config.layer_widths();
        let k = config.kernel;
        let mut params = Vec::new();
        let mut layer = |name: &str, out: usize, inp: usize, k: usize| {
            let bound = libm::sqrt(6.0 / (inp * k * k) as f64);
            params.push((format!("{name}.weight"), Tensor::uniform(&[out, inp, k, k], bound, &mut rng)));
            params.push((format!("{name}.bias"), Tensor::zeros(&[out])));
        };
        let names = config.layer_names();
        let d = config.depth;
        let mut inp = config.channels;
        for i in 0..=d {
            layer(&names[i], widths[i], inp, k);
            inp = widths[i];
        }
        for j in 0..d {
            let idx = d + 1 + j;
            let skip = widths[d - 1 - j];
            layer(&names[idx], widths[idx], inp + skip, k);
            inp = widths[idx];
        }
        layer("head", 2, inp, 1);
        Ok(Self { config, params })
    }

    pub fn from_named(config: SegmenterConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        load_into(&mut model.params, tensors)?;
        Ok(model)
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn named_tensors(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn named_tensors_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.config.layer_names()
    }

    fn check_batch(&self, patches: &[ImagePatch]) -> Result<(usize, usize)> {
        let first = patches.first().ok_or(Error::Empty("patch set"))?;
        let (h, w) = (first.height(), first.width());
        let stride = 1usize << self.config.depth;
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::Invalid(format!("patch size {h}x{w} not divisible by {stride}")));
        }
        for p in patches {
            if p.levels() != self.config.levels {
                return Err(Error::Quantization { expected: self.config.levels, found: p.levels() });
            }
            if (p.channels(), p.height(), p.width()) != (self.config.channels, h, w) {
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
        let scale = 1.0 / f64::from(self.config.levels - 1);
        let data = patches.iter().flat_map(|p| p.data().iter().map(move |&v| f64::from(v) * scale)).collect();
        Tensor::new(vec![patches.len(), self.config.channels, h, w], data).expect("batch shape")
    }

    /// Returns the logits node and the exposed activation nodes.
    fn forward(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<(Var, Vec<Var>)> {
        let d = self.config.depth;
        let pad = self.config.kernel / 2;
        let stage = |tape: &mut Tape, x: Var, p: &[Var]| -> Result<Var> {
            let y = tape.conv2d(x, p[0], None, pad)?;
            let y = tape.add_bias(y, p[1])?;
            Ok(tape.relu(y))
        };
        let mut layers = params.chunks(2);
        let mut acts = Vec::with_capacity(2 * d + 1);
        let mut skips = Vec::with_capacity(d);
        let mut h = input;
        for _ in 0..d {
            h = stage(tape, h, layers.next().expect("encoder"))?;
            acts.push(h);
            skips.push(h);
            h = tape.max_pool2(h)?;
        }
        h = stage(tape, h, layers.next().expect("bottleneck"))?;
        acts.push(h);
        for skip in skips.into_iter().rev() {
            let up = tape.upsample2(h)?;
            let cat = tape.concat_channels(up, skip)?;
            h = stage(tape, cat, layers.next().expect("decoder"))?;
            acts.push(h);
        }
        let head = layers.next().expect("head");
        let logits = tape.conv2d(h, head[0], None, 0)?;
        let logits = tape.add_bias(logits, head[1])?;
        Ok((logits, acts))
    }

    /// Inference pass over a batch of equally sized patches.
    pub fn forward_batch(&self, patches: &[ImagePatch]) -> Result<SegmenterOutput> {
        let (h, w) = self.check_batch(patches)?;
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let input = tape.constant(self.input_tensor(patches, h, w));
        let (logits, acts) = self.forward(&mut tape, &params, input)?;
        let activations =
            self.layer_names().into_iter().zip(acts).map(|(name, v)| (name, tape.value(v).clone())).collect();
        Ok(SegmenterOutput { logits: tape.value(logits).clone(), activations })
    }

    /// Per-pixel argmax of the two class logits; ties go to background.
    pub fn segment(&self, patch: &ImagePatch) -> Result<MaskPatch> {
        Ok(self.segment_batch(core::slice::from_ref(patch))?.remove(0))
    }

    pub fn segment_batch(&self, patches: &[ImagePatch]) -> Result<Vec<MaskPatch>> {
        let out = self.forward_batch(patches)?;
        Ok(masks_from_logits(&out.logits, patches))
    }
}

/// Argmax masks from `[N, 2, H, W]` logits.
pub fn masks_from_logits(logits: &Tensor, patches: &[ImagePatch]) -> Vec<MaskPatch> {
    let per = logits.numel() / patches.len().max(1);
    patches
        .iter()
        .zip(logits.data().chunks(per))
        .map(|(p, l)| {
            let plane = p.height() * p.width();
            let labels = (0..plane).map(|s| u8::from(l[plane + s] > l[s])).collect();
            MaskPatch::new(p.height(), p.width(), labels).expect("mask geometry")
        })
        .collect()
}

fn check_pairs(model: &Segmenter, pairs: &[(ImagePatch, MaskPatch)]) -> Result<Vec<ImagePatch>> {
    let images: Vec<ImagePatch> = pairs.iter().map(|(i, _)| i.clone()).collect();
    model.check_batch(&images)?;
    for (i, (img, mask)) in pairs.iter().enumerate() {
        if !mask.matches_geometry(img) {
            return Err(Error::Invalid(format!(
                "pair {i}: mask {}x{} does not match image {}x{}",
                mask.height(),
                mask.width(),
                img.height(),
                img.width()
            )));
        }
    }
    Ok(images)
}

/// Trains the segmenter with pixel-wise two-class cross-entropy and Adam.
pub fn train_task(
    model: &mut Segmenter,
    train: &[(ImagePatch, MaskPatch)],
    valid: &[(ImagePatch, MaskPatch)],
    cfg: &TrainConfig,
) -> Result<TaskCurve> {
    let images = check_pairs(model, train)?;
    if !valid.is_empty() {
        check_pairs(model, valid)?;
    }
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let (h, w) = (images[0].height(), images[0].width());
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut state = AdamState::default();
    let mut rng = rng::seeded(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = TaskCurve::default();
    for epoch in 0..cfg.epochs {
        rng::shuffle(&mut order, &mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<ImagePatch> = idx.iter().map(|&i| images[i].clone()).collect();
            let targets: Vec<u32> =
                idx.iter().flat_map(|&i| train[i].1.data().iter().map(|&v| u32::from(v))).collect();
            let mut tape = Tape::new();
            let vars: Vec<Var> = model.params.iter().map(|(_, t)| tape.leaf(t.clone(), true)).collect();
            let input = tape.constant(model.input_tensor(&batch, h, w));
            let (logits, _) = model.forward(&mut tape, &vars, input)?;
            let loss = tape.cross_entropy(logits, &targets, 2)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numerical(format!("non-finite task loss at epoch {epoch}, step {step}")));
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
        curve.train_loss.push(sum / count as f64);
        if !valid.is_empty() {
            curve.valid_f1.push(evaluate_f1(model, valid)?);
        }
    }
    Ok(curve)
}

/// Pooled F1 of the model's predictions over labeled pairs.
pub fn evaluate_f1(model: &Segmenter, pairs: &[(ImagePatch, MaskPatch)]) -> Result<F1Score> {
    let mut confusion = Confusion::default();
    for chunk in pairs.chunks(32) {
        let images: Vec<ImagePatch> = chunk.iter().map(|(i, _)| i.clone()).collect();
        for (pred, (_, truth)) in model.segment_batch(&images)?.iter().zip(chunk) {
            confusion.add(pred, truth)?;
        }
    }
    Ok(confusion.f1())
}

/// Pixel confusion counts for the object class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// F1 of the object class. `undefined` is set, and `value` is 0, when
/// neither the prediction nor the truth contains an object pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct F1Score {
    pub value: f64,
    pub undefined: bool,
}

impl Confusion {
    pub fn add(&mut self, pred: &MaskPatch, truth: &MaskPatch) -> Result<()> {
        if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
            return Err(Error::Invalid(format!(
                "prediction {}x{} vs truth {}x{}",
                pred.height(),
                pred.width(),
                truth.height(),
                truth.width()
            )));
        }
        for (&p, &t) in pred.data().iter().zip(truth.data()) {
            match (p, t) {
                (1, 1) => self.tp += 1,
                (1, _) => self.fp += 1,
                (_, 1) => self.fn_ += 1,
                _ => self.tn += 1,
            }
        }
        Ok(())
    }

    pub fn f1(&self) -> F1Score {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            return F1Score { value: 0.0, undefined: true };
        }
        F1Score { value: (2 * self.tp) as f64 / denom as f64, undefined: false }
    }
}

pub fn f1_score(pred: &MaskPatch, truth: &MaskPatch) -> Result<F1Score> {
    let mut c = Confusion::default();
    c.add(pred, truth)?;
    Ok(c.f1())
}

/// Micro-averaged F1 over a set (confusion counts pooled across masks).
pub fn f1_score_set(preds: &[MaskPatch], truths: &[MaskPatch]) -> Result<F1Score> {
    if preds.len() != truths.len() {
        return Err(Error::Invalid(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    let mut c = Confusion::default();
    for (p, t) in preds.iter().zip(truths) {
        c.add(p, t)?;
    }
    Ok(c.f1())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, v: &[u8]) -> MaskPatch {
        MaskPatch::new(v.len() / w, w, v.to_vec()).unwrap()
    }

    #[test]
    fn f1_perfect_complement_and_partial() {
        let t = mask(4, &[1, 1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(f1_score(&t, &t).unwrap().value, 1.0);
        let c = mask(4, &[0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(f1_score(&c, &t).unwrap().value, 0.0);
        let p = mask(4, &[1, 1, 0, 0, 1, 1, 0, 0]);
        assert_eq!(f1_score(&p, &t).unwrap().value, 0.5);
    }

    #[test]
    fn f1_empty_masks_are_flagged() {
        let z = mask(2, &[0, 0, 0, 0]);
        let s = f1_score(&z, &z).unwrap();
        assert_eq!(s, F1Score { value: 0.0, undefined: true });
    }

    #[test]
    fn f1_geometry_mismatch() {
        assert!(f1_score(&mask(2, &[0, 0]), &mask(1, &[0, 0])).is_err());
        assert!(f1_score_set(&[mask(2, &[0, 0])], &[]).is_err());
    }

    #[test]
    fn pooled_f1_sums_counts() {
        let t1 = mask(2, &[1, 1]);
        let p1 = mask(2, &[1, 0]);
        let t2 = mask(2, &[0, 0]);
        let p2 = mask(2, &[1, 1]);
        // tp 1, fn 1, fp 2 -> 2 / (2 + 2 + 1)
        let s = f1_score_set(&[p1, p2], &[t1, t2]).unwrap();
        assert!((s.value - 0.4).abs() < 1e-15);
    }

    #[test]
    fn layer_names_are_stable() {
        let cfg = SegmenterConfig::default();
        assert_eq!(cfg.layer_names(), ["enc1", "enc2", "bottleneck", "dec2", "dec1"]);
        assert_eq!(cfg.layer_widths(), [16, 32, 64, 32, 16]);
    }

    #[test]
    fn output_matches_input_size() {
        let cfg = SegmenterConfig { base_channels: 4, ..Default::default() };
        let model = Segmenter::new(cfg, 1).unwrap();
        let p = ImagePatch::gray(8, 12, 256, (0..96).map(|v| v as u8).collect()).unwrap();
        let out = model.forward_batch(core::slice::from_ref(&p)).unwrap();
        assert_eq!(out.logits.shape(), &[1, 2, 8, 12]);
        assert_eq!(out.activations[2].1.shape(), &[1, 16, 2, 3]);
        let bad = ImagePatch::gray(6, 6, 256, vec![0; 36]).unwrap();
        assert!(model.forward_batch(&[bad]).is_err());
    }

    #[test]
    fn zero_logits_tie_breaks_to_background() {
        let cfg = SegmenterConfig { base_channels: 2, depth: 1, ..Default::default() };
        let mut model = Segmenter::new(cfg, 4).unwrap();
        let n = model.params.len();
        for (_, t) in &mut model.params[n - 2..] {
            t.data_mut().fill(0.0);
        }
        let p = ImagePatch::gray(4, 4, 256, (0..16).map(|v| v * 10).collect()).unwrap();
        assert_eq!(model.segment(&p).unwrap().object_pixels(), 0);
    }
}
