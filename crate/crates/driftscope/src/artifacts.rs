//! Model checkpoints, JSON sidecars, training curves and the layer registry.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use driftscope_core::checkpoint;
use driftscope_core::density::{DensityConfig, DensityCurve, PixelCnn, TrainConfig};
use driftscope_core::segment::{F1Score, Segmenter, SegmenterConfig, TaskCurve};
use driftscope_core::Tensor;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const SIDECAR_VERSION: u32 = 1;
pub const DENSITY_STEM: &str = "density";
pub const TASK_STEM: &str = "task";
pub const LAYERS_FILE: &str = "layers.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensitySidecar {
    pub schema_version: u32,
    pub config: DensityConfig,
    pub tile: usize,
    pub train: TrainConfig,
    pub train_bpd: Vec<f64>,
    pub valid_bpd: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSidecar {
    pub schema_version: u32,
    pub config: SegmenterConfig,
    pub train: TrainConfig,
    pub train_loss: Vec<f64>,
    pub valid_f1: Vec<F1Score>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub filters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRegistry {
    pub headline: String,
    pub layers: Vec<LayerEntry>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| AppError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    write(path, (text + "\n").as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::format(path, e))
}

fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    checkpoint::decode(&bytes).map_err(|e| AppError::format(path, e))
}

pub fn checkpoint_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.dsck"))
}

pub fn sidecar_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.json"))
}

pub fn save_density(dir: &Path, model: &PixelCnn, tile: usize, train: &TrainConfig, curve: &DensityCurve) -> Result<()> {
    write(&checkpoint_path(dir, DENSITY_STEM), &checkpoint::encode(model.named_tensors())?)?;
    let sidecar = DensitySidecar {
        schema_version: SIDECAR_VERSION,
        config: model.config().clone(),
        tile,
        train: *train,
        train_bpd: curve.train_bpd.clone(),
        valid_bpd: curve.valid_bpd.clone(),
    };
    write_json(&sidecar_path(dir, DENSITY_STEM), &sidecar)?;
    let mut csv = String::from("epoch,train_bpd,valid_bpd\n");
    for (e, t) in curve.train_bpd.iter().enumerate() {
        let v = curve.valid_bpd.get(e).map(|v| v.to_string()).unwrap_or_default();
        writeln!(csv, "{},{t},{v}", e + 1).unwrap();
    }
    write(&dir.join("density_curve.csv"), csv.as_bytes())
}

pub fn load_density(dir: &Path) -> Result<(PixelCnn, DensitySidecar)> {
    let sidecar: DensitySidecar = read_json(&sidecar_path(dir, DENSITY_STEM))?;
    let tensors = read_checkpoint(&checkpoint_path(dir, DENSITY_STEM))?;
    let model = PixelCnn::from_named(sidecar.config.clone(), tensors)
        .map_err(|e| AppError::format(checkpoint_path(dir, DENSITY_STEM), e))?;
    Ok((model, sidecar))
}

pub fn save_task(dir: &Path, model: &Segmenter, train: &TrainConfig, curve: &TaskCurve, headline: &str) -> Result<()> {
    write(&checkpoint_path(dir, TASK_STEM), &checkpoint::encode(model.named_tensors())?)?;
    let sidecar = TaskSidecar {
        schema_version: SIDECAR_VERSION,
        config: model.config().clone(),
        train: *train,
        train_loss: curve.train_loss.clone(),
        valid_f1: curve.valid_f1.clone(),
    };
    write_json(&sidecar_path(dir, TASK_STEM), &sidecar)?;
    let mut csv = String::from("epoch,train_loss,valid_f1\n");
    for (e, t) in curve.train_loss.iter().enumerate() {
        let v = curve.valid_f1.get(e).map(|f| f.value.to_string()).unwrap_or_default();
        writeln!(csv, "{},{t},{v}", e + 1).unwrap();
    }
    write(&dir.join("task_curve.csv"), csv.as_bytes())?;
    let registry = LayerRegistry {
        headline: headline.to_string(),
        layers: model
            .layer_names()
            .into_iter()
            .zip(model.config().layer_widths())
            .map(|(name, filters)| LayerEntry { name, filters })
            .collect(),
    };
    write_json(&dir.join(LAYERS_FILE), &registry)
}

pub fn load_task(dir: &Path) -> Result<(Segmenter, TaskSidecar)> {
    let sidecar: TaskSidecar = read_json(&sidecar_path(dir, TASK_STEM))?;
    let tensors = read_checkpoint(&checkpoint_path(dir, TASK_STEM))?;
    let model = Segmenter::from_named(sidecar.config.clone(), tensors)
        .map_err(|e| AppError::format(checkpoint_path(dir, TASK_STEM), e))?;
    Ok((model, sidecar))
}

pub fn load_layers(dir: &Path) -> Result<LayerRegistry> {
    read_json(&dir.join(LAYERS_FILE))
}
