//! Experiment configuration.
//!
//! A single JSON document fully determines an experiment. Scalar fields can
//! be overridden from the command line; precedence is flag, then the
//! `DRIFTSCOPE_SEED` environment variable (seed only), then the config file,
//! then the defaults below.

use std::path::{Path, PathBuf};

use driftscope_core::density::{DensityConfig, LikelihoodStatistic, TrainConfig};
use driftscope_core::segment::{SegmenterConfig, HEADLINE_LAYER};
use driftscope_core::shift::{check_severities, ShiftKind};
use driftscope_core::synth::BlobConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const SEED_ENV: &str = "DRIFTSCOPE_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for patch scoring; training is always single-threaded.
    pub threads: usize,
    pub dataset: DatasetConfig,
    pub density: DensitySection,
    pub task: TaskSection,
    pub sweep: Vec<SweepEntry>,
    pub protocol: ProtocolConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub generator: BlobConfig,
    /// Existing dataset directory (with a manifest) to use instead of `output_dir/data`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_dir: Option<PathBuf>,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl TrainSettings {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig { epochs: self.epochs, batch_size: self.batch_size, lr: self.lr, seed }
    }
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { epochs: 5, batch_size: 32, lr: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySection {
    pub model: DensityConfig,
    /// Side of the square tiles the density model is trained and scored on.
    pub tile: usize,
    pub train: TrainSettings,
    pub statistic: LikelihoodStatistic,
}

impl Default for DensitySection {
    fn default() -> Self {
        Self {
            model: DensityConfig::default(),
            tile: 8,
            train: TrainSettings { epochs: 3, batch_size: 32, lr: 2e-3 },
            statistic: LikelihoodStatistic::BitsPerDim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub model: SegmenterConfig,
    pub train: TrainSettings,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self { model: SegmenterConfig::default(), train: TrainSettings { epochs: 8, batch_size: 16, lr: 3e-3 } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub kind: ShiftKind,
    /// Ascending, starting at 0.
    pub severities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub sets: usize,
    pub patches_per_set: usize,
    /// Layers scored by the shift metric; all exposed layers when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<String>>,
    pub headline_layer: String,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { sets: 5, patches_per_set: 1000, layers: None, headline_layer: HEADLINE_LAYER.to_string() }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { generator: BlobConfig::default(), input_dir: None, train: 300, valid: 100, test: 1200 }
    }
}

pub fn default_sweep() -> Vec<SweepEntry> {
    let entry = |kind, severities: &[f64]| SweepEntry { kind, severities: severities.to_vec() };
    vec![
        entry(ShiftKind::ImperceptibleNoise, &[0.0, 2.0, 4.0, 8.0]),
        entry(ShiftKind::IntensityShift, &[0.0, 10.0, 25.0, 50.0]),
        entry(ShiftKind::Contrast, &[0.0, 0.25, 0.6, 1.2]),
        entry(ShiftKind::Blur, &[0.0, 0.6, 1.2, 2.0]),
        entry(ShiftKind::QuantizationJitter, &[0.0, 3.0, 6.0, 12.0]),
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("driftscope-run"),
            threads: 1,
            dataset: DatasetConfig::default(),
            density: DensitySection::default(),
            task: TaskSection::default(),
            sweep: default_sweep(),
            protocol: ProtocolConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies the seed environment override, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| AppError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AppError::Config(m));
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        self.dataset.generator.validate().map_err(|e| AppError::Config(format!("dataset.generator: {e}")))?;
        let g = &self.dataset.generator;
        if self.density.model.levels != g.levels || self.task.model.levels != g.levels {
            return bad(format!(
                "quantization levels disagree: generator {}, density {}, task {}",
                g.levels, self.density.model.levels, self.task.model.levels
            ));
        }
        if self.density.tile == 0 || !g.size.is_multiple_of(self.density.tile) {
            return bad(format!("density.tile {} must divide image size {}", self.density.tile, g.size));
        }
        if !g.size.is_multiple_of(1 << self.task.model.depth) {
            return bad(format!("image size {} not divisible by 2^{}", g.size, self.task.model.depth));
        }
        for (name, t) in [("density", &self.density.train), ("task", &self.task.train)] {
            if t.batch_size == 0 || !(t.lr.is_finite() && t.lr > 0.0) {
                return bad(format!("{name}.train needs batch_size > 0 and a positive learning rate"));
            }
        }
        if self.protocol.sets == 0 || self.protocol.patches_per_set == 0 {
            return bad("protocol needs at least one set of at least one patch".into());
        }
        let layers = self.task.model.layer_names();
        for l in self.scored_layers() {
            if !layers.contains(&l) {
                return bad(format!("unknown layer `{l}`; the task model exposes {layers:?}"));
            }
        }
        if !self.scored_layers().contains(&self.protocol.headline_layer) {
            return bad(format!("headline layer `{}` is not scored", self.protocol.headline_layer));
        }
        if self.sweep.is_empty() {
            return bad("sweep must list at least one generator".into());
        }
        for e in &self.sweep {
            check_severities(&e.severities).map_err(|err| AppError::Config(format!("sweep {}: {err}", e.kind)))?;
        }
        Ok(())
    }

    pub fn scored_layers(&self) -> Vec<String> {
        self.protocol.layers.clone().unwrap_or_else(|| self.task.model.layer_names())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dataset.input_dir.clone().unwrap_or_else(|| self.output_dir.join("data"))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.output_dir.join("models")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.output_dir.join("report")
    }
}

/// Sub-stream identifiers for seeds derived from the master seed.
pub mod streams {
    pub const TRAIN_SET: u64 = 1;
    pub const VALID_SET: u64 = 2;
    pub const TEST_SET: u64 = 3;
    pub const DENSITY_INIT: u64 = 10;
    pub const DENSITY_TRAIN: u64 = 11;
    pub const TASK_INIT: u64 = 20;
    pub const TASK_TRAIN: u64 = 21;
    pub const SWEEP: u64 = 30;
    pub const PROTOCOL: u64 = 40;
}
