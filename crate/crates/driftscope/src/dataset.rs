//! On-disk datasets: 8-bit grayscale PNG images, `{0,255}` PNG masks and a
//! JSON manifest.

use std::path::{Path, PathBuf};

use driftscope_core::synth::{generate_set, BlobConfig};
use driftscope_core::{rng::derive_seed, ImagePatch, MaskPatch};
use image::{ExtendedColorType, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::config::{streams, ExperimentConfig};
use crate::error::{AppError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

pub type Pair = (ImagePatch, MaskPatch);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Pair>,
    pub valid: Vec<Pair>,
    pub test: Vec<Pair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub levels: u16,
    pub height: usize,
    pub width: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub generator: Option<BlobConfig>,
    pub train: Vec<FileEntry>,
    pub valid: Vec<FileEntry>,
    pub test: Vec<FileEntry>,
}

/// Generates the synthetic dataset described by the config.
pub fn synthesize(cfg: &ExperimentConfig) -> Result<Dataset> {
    let g = &cfg.dataset.generator;
    let split = |n, stream| generate_set(g, n, derive_seed(cfg.seed, stream));
    Ok(Dataset {
        train: split(cfg.dataset.train, streams::TRAIN_SET)?,
        valid: split(cfg.dataset.valid, streams::VALID_SET)?,
        test: split(cfg.dataset.test, streams::TEST_SET)?,
    })
}

fn write_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    image::save_buffer_with_format(path, data, width as u32, height as u32, ExtendedColorType::L8, ImageFormat::Png)
        .map_err(|e| AppError::format(path, e))
}

fn read_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    if !path.exists() {
        return Err(AppError::MissingArtifact { path: path.to_path_buf(), detail: "file not found".into() });
    }
    let img = image::open(path).map_err(|e| AppError::format(path, e))?;
    if img.color() != image::ColorType::L8 {
        return Err(AppError::format(path, format!("expected 8-bit grayscale, found {:?}", img.color())));
    }
    let img = img.into_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

/// Writes the dataset under `dir`. Refuses a non-empty directory unless
/// `force` is set, in which case the split directories are replaced.
pub fn write_dataset(dir: &Path, data: &Dataset, seed: Option<u64>, generator: Option<&BlobConfig>, force: bool) -> Result<Manifest> {
    let manifest_path = dir.join(MANIFEST);
    let occupied = match std::fs::read_dir(dir) {
        Ok(mut entries) => entries.next().is_some(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
        Err(e) => return Err(AppError::io(dir, e)),
    };
    if occupied && !force {
        return Err(AppError::Config(format!("{} is not empty; pass --force to overwrite", dir.display())));
    }
    if occupied {
        for name in ["train", "valid", "test"] {
            let sub = dir.join(name);
            if sub.is_dir() {
                std::fs::remove_dir_all(&sub).map_err(|e| AppError::io(&sub, e))?;
            }
        }
    }
    let first = data
        .train
        .first()
        .or_else(|| data.test.first())
        .ok_or_else(|| AppError::Config("dataset has no train or test samples".into()))?;
    let (height, width, levels) = (first.0.height(), first.0.width(), first.0.levels());
    let mut manifest = Manifest {
        schema_version: MANIFEST_VERSION,
        levels,
        height,
        width,
        seed,
        generator: generator.cloned(),
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for (name, pairs) in [("train", &data.train), ("valid", &data.valid), ("test", &data.test)] {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub).map_err(|e| AppError::io(&sub, e))?;
        let mut entries = Vec::with_capacity(pairs.len());
        for (i, (img, mask)) in pairs.iter().enumerate() {
            if img.channels() != 1 {
                return Err(AppError::Config("only single-channel images can be written".into()));
            }
            if (img.height(), img.width(), img.levels()) != (height, width, levels) {
                return Err(AppError::Config(format!("{name}[{i}]: inconsistent geometry or levels")));
            }
            let entry = FileEntry {
                image: PathBuf::from(format!("{name}/{i:05}.png")),
                mask: PathBuf::from(format!("{name}/{i:05}_mask.png")),
            };
            write_png(&dir.join(&entry.image), width, height, img.data())?;
            let mask_bytes: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
            write_png(&dir.join(&entry.mask), width, height, &mask_bytes)?;
            entries.push(entry);
        }
        match name {
            "train" => manifest.train = entries,
            "valid" => manifest.valid = entries,
            _ => manifest.test = entries,
        }
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json + "\n").map_err(|e| AppError::io(&manifest_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| AppError::format(&path, e))?;
    if m.schema_version != MANIFEST_VERSION {
        return Err(AppError::format(&path, format!("unsupported manifest version {}", m.schema_version)));
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, Dataset)> {
    let m = read_manifest(dir)?;
    let load = |entries: &[FileEntry]| -> Result<Vec<Pair>> {
        entries
            .iter()
            .map(|e| {
                let ipath = dir.join(&e.image);
                let (w, h, pixels) = read_png(&ipath)?;
                if (h, w) != (m.height, m.width) {
                    return Err(AppError::format(&ipath, format!("{w}x{h} image in a {}x{} dataset", m.width, m.height)));
                }
                let img = ImagePatch::gray(h, w, m.levels, pixels).map_err(|err| AppError::format(&ipath, err))?;
                let mpath = dir.join(&e.mask);
                let (mw, mh, raw) = read_png(&mpath)?;
                if (mh, mw) != (h, w) {
                    return Err(AppError::format(&mpath, "mask size differs from image"));
                }
                let labels = raw
                    .iter()
                    .map(|&v| match v {
                        0 => Ok(0),
                        255 => Ok(1),
                        _ => Err(AppError::format(&mpath, format!("mask value {v} is not 0 or 255"))),
                    })
                    .collect::<Result<Vec<u8>>>()?;
                Ok((img, MaskPatch::new(h, w, labels)?))
            })
            .collect()
    };
    let data = Dataset { train: load(&m.train)?, valid: load(&m.valid)?, test: load(&m.test)? };
    Ok((m, data))
}

/// Checks that a loaded dataset fits the configured models.
pub fn check_compatible(m: &Manifest, cfg: &ExperimentConfig) -> Result<()> {
    if m.levels != cfg.density.model.levels || m.levels != cfg.task.model.levels {
        return Err(AppError::Config(format!(
            "dataset has {} quantization levels but the models expect {}",
            m.levels, cfg.density.model.levels
        )));
    }
    if !m.height.is_multiple_of(cfg.density.tile) || !m.width.is_multiple_of(cfg.density.tile) {
        return Err(AppError::Config(format!("tile {} does not divide {}x{} images", cfg.density.tile, m.width, m.height)));
    }
    Ok(())
}
