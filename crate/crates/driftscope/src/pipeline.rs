//! Training and scoring pipeline shared by the command line and tests.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use driftscope_core::density::{train_density, DensityCurve, PixelCnn, TrainConfig};
use driftscope_core::dsm::{layer_shift, FilterMeans};
use driftscope_core::empirical::wasserstein1_samples;
use driftscope_core::rng::{derive_seed, sample_without_replacement, seeded};
use driftscope_core::segment::{masks_from_logits, train_task, Confusion, Segmenter, TaskCurve};
use driftscope_core::shift::ShiftSpec;
use driftscope_core::{ImagePatch, MaskPatch};
use rayon::prelude::*;

use crate::config::{streams, ExperimentConfig};
use crate::dataset::{Dataset, Pair};
use crate::error::{AppError, Result};
use crate::report::{
    correlate_experiment, DistributionDump, DomainKey, DomainShiftReport, F1Stat, LayerScore, ProtocolSummary,
    ReportInputs, ScoreStat, Timestamps,
};

const SCORE_CHUNK: usize = 32;

fn images(pairs: &[Pair]) -> Vec<ImagePatch> {
    pairs.iter().map(|(i, _)| i.clone()).collect()
}

fn tiles_of(pairs: &[Pair], tile: usize) -> Result<Vec<ImagePatch>> {
    let mut out = Vec::new();
    for (img, _) in pairs {
        out.extend(img.tiles(tile)?);
    }
    Ok(out)
}

fn numerical(e: driftscope_core::Error) -> AppError {
    match e {
        driftscope_core::Error::Numerical(m) => AppError::Numerical(m),
        other => AppError::Core(other),
    }
}

pub fn density_train_config(cfg: &ExperimentConfig) -> TrainConfig {
    cfg.density.train.with_seed(derive_seed(cfg.seed, streams::DENSITY_TRAIN))
}

pub fn task_train_config(cfg: &ExperimentConfig) -> TrainConfig {
    cfg.task.train.with_seed(derive_seed(cfg.seed, streams::TASK_TRAIN))
}

/// Trains the density model on tiles of the training split.
pub fn train_density_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<(PixelCnn, DensityCurve)> {
    let train = tiles_of(&data.train, cfg.density.tile)?;
    let valid = tiles_of(&data.valid, cfg.density.tile)?;
    let mut model = PixelCnn::new(cfg.density.model.clone(), derive_seed(cfg.seed, streams::DENSITY_INIT))?;
    let curve = train_density(&mut model, &train, &valid, &density_train_config(cfg)).map_err(numerical)?;
    Ok((model, curve))
}

/// Trains the segmentation model on the training split.
pub fn train_task_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<(Segmenter, TaskCurve)> {
    let mut model = Segmenter::new(cfg.task.model.clone(), derive_seed(cfg.seed, streams::TASK_INIT))?;
    let curve = train_task(&mut model, &data.train, &data.valid, &task_train_config(cfg)).map_err(numerical)?;
    Ok((model, curve))
}

/// Per-image filter means and predicted masks of the task model.
struct TaskPass {
    means: FilterMeans,
    masks: Vec<MaskPatch>,
}

fn task_pass(model: &Segmenter, patches: &[ImagePatch]) -> Result<TaskPass> {
    let chunks = patches
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let out = model.forward_batch(chunk)?;
            let means: Vec<Vec<f64>> = out
                .activations
                .iter()
                .map(|(_, act)| {
                    let plane = act.shape()[2] * act.shape()[3];
                    act.data().chunks(plane).map(|c| c.iter().sum::<f64>() / plane as f64).collect()
                })
                .collect();
            Ok((means, masks_from_logits(&out.logits, chunk)))
        })
        .collect::<driftscope_core::Result<Vec<_>>>()?;
    let names = model.layer_names();
    let widths = model.config().layer_widths();
    let mut layers: Vec<(String, usize, Vec<f64>)> = names.into_iter().zip(widths).map(|(n, k)| (n, k, Vec::new())).collect();
    let mut masks = Vec::with_capacity(patches.len());
    for (means, m) in chunks {
        for (slot, part) in layers.iter_mut().zip(means) {
            slot.2.extend(part);
        }
        masks.extend(m);
    }
    Ok(TaskPass { means: FilterMeans::from_parts(patches.len(), layers)?, masks })
}

/// Likelihood statistic of the requested tiles, in the given order.
fn score_tiles(cfg: &ExperimentConfig, model: &PixelCnn, tiles: &[ImagePatch]) -> Result<Vec<f64>> {
    let stat = cfg.density.statistic;
    let parts = tiles
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| Ok(model.log_likelihoods(chunk)?.iter().map(|s| stat.of(s)).collect::<Vec<f64>>()))
        .collect::<driftscope_core::Result<Vec<_>>>()?;
    let out: Vec<f64> = parts.into_iter().flatten().collect();
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(AppError::Numerical(format!("non-finite likelihood for tile {i}")));
    }
    Ok(out)
}

/// Scores the tiles at the given pool indices, computing each distinct tile once.
fn score_tile_sets(
    cfg: &ExperimentConfig,
    model: &PixelCnn,
    images: &[ImagePatch],
    tiles_per_image: usize,
    sets: &[Vec<usize>],
) -> Result<Vec<Vec<f64>>> {
    let mut needed: Vec<usize> = sets.iter().flatten().copied().collect();
    needed.sort_unstable();
    needed.dedup();
    let mut tiles = Vec::with_capacity(needed.len());
    let mut cache: BTreeMap<usize, Vec<ImagePatch>> = BTreeMap::new();
    for &t in &needed {
        let img = t / tiles_per_image;
        if !cache.contains_key(&img) {
            cache.clear();
            cache.insert(img, images[img].tiles(cfg.density.tile)?);
        }
        tiles.push(cache[&img][t % tiles_per_image].clone());
    }
    let scores = score_tiles(cfg, model, &tiles)?;
    let lookup: BTreeMap<usize, f64> = needed.into_iter().zip(scores).collect();
    Ok(sets.iter().map(|s| s.iter().map(|i| lookup[i]).collect()).collect())
}

fn confusion_of(pred: &MaskPatch, truth: &MaskPatch) -> Result<Confusion> {
    let mut c = Confusion::default();
    c.add(pred, truth)?;
    Ok(c)
}

fn pooled(confusions: &[Confusion], indices: &[usize]) -> Confusion {
    let mut total = Confusion::default();
    for &i in indices {
        let c = &confusions[i];
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
        total.tn += c.tn;
    }
    total
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn draw_sets(seed: u64, stream: u64, pool: usize, sets: usize, per_set: usize, what: &str) -> Result<Vec<Vec<usize>>> {
    if pool < per_set {
        return Err(AppError::Protocol(format!(
            "protocol underfilled: {pool} {what} available for sets of {per_set}"
        )));
    }
    let base = derive_seed(derive_seed(seed, streams::PROTOCOL), stream);
    Ok((0..sets)
        .map(|s| sample_without_replacement(pool, per_set, &mut seeded(derive_seed(base, s as u64))))
        .collect())
}

/// Runs the shift sweep and assembles the report.
///
/// Each of the `sets` draws picks `patches_per_set` test images (shift
/// metric and F1), `patches_per_set` training tiles and `patches_per_set`
/// test tiles (likelihood branch). The shift metric pairs every drawn
/// source image with its own shifted copy.
pub fn score(cfg: &ExperimentConfig, data: &Dataset, density: &PixelCnn, task: &Segmenter) -> Result<DomainShiftReport> {
    cfg.validate()?;
    if density.config() != &cfg.density.model {
        return Err(AppError::Config("density checkpoint was trained with a different architecture".into()));
    }
    if task.config() != &cfg.task.model {
        return Err(AppError::Config("task checkpoint was trained with a different architecture".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| AppError::Config(format!("thread pool: {e}")))?;
    pool.install(|| score_inner(cfg, data, density, task))
}

fn score_inner(cfg: &ExperimentConfig, data: &Dataset, density: &PixelCnn, task: &Segmenter) -> Result<DomainShiftReport> {
    let started = now_ms();
    let p = &cfg.protocol;
    let test_images = images(&data.test);
    let train_images = images(&data.train);
    let (h, w) = match test_images.first() {
        Some(i) => (i.height(), i.width()),
        None => return Err(AppError::Protocol("protocol underfilled: the test split is empty".into())),
    };
    let tiles_per_image = (h / cfg.density.tile) * (w / cfg.density.tile);
    let image_sets = draw_sets(cfg.seed, 0, test_images.len(), p.sets, p.patches_per_set, "test images")?;
    let train_tile_sets =
        draw_sets(cfg.seed, 1, train_images.len() * tiles_per_image, p.sets, p.patches_per_set, "training tiles")?;
    let test_tile_sets =
        draw_sets(cfg.seed, 2, test_images.len() * tiles_per_image, p.sets, p.patches_per_set, "test tiles")?;

    let layers = cfg.scored_layers();
    let widths: BTreeMap<String, usize> =
        task.layer_names().into_iter().zip(task.config().layer_widths()).collect();
    let train_scores = score_tile_sets(cfg, density, &train_images, tiles_per_image, &train_tile_sets)?;

    let mut domains = vec![DomainKey::source()];
    let mut specs = vec![None];
    for entry in &cfg.sweep {
        let kind_seed = derive_seed(derive_seed(cfg.seed, streams::SWEEP), entry.kind as u64);
        for (k, &s) in entry.severities.iter().enumerate().skip(1) {
            domains.push(DomainKey::shifted(entry.kind, k, s));
            specs.push(Some(ShiftSpec::new(entry.kind, s, derive_seed(kind_seed, k as u64))?));
        }
    }

    let source_pass = task_pass(task, &test_images)?;
    let mut likelihood = BTreeMap::new();
    let mut dss = BTreeMap::new();
    let mut f1 = BTreeMap::new();
    let stat_name = cfg.density.statistic.name();
    let mut dists = vec![DistributionDump { name: "train".into(), statistic: stat_name.clone(), samples: sorted(&train_scores[0]) }];
    for (key, spec) in domains.iter().zip(&specs) {
        let shifted;
        let (target, pass) = match spec {
            None => (&test_images, None),
            Some(spec) => {
                shifted = test_images
                    .par_iter()
                    .enumerate()
                    .map(|(i, img)| spec.apply_one(img, i))
                    .collect::<driftscope_core::Result<Vec<_>>>()?;
                let pass = task_pass(task, &shifted)?;
                (&shifted, Some(pass))
            }
        };
        let pass = pass.as_ref().unwrap_or(&source_pass);

        let target_scores = score_tile_sets(cfg, density, target, tiles_per_image, &test_tile_sets)?;
        let w1 = train_scores
            .iter()
            .zip(&target_scores)
            .map(|(a, b)| wasserstein1_samples(a, b))
            .collect::<driftscope_core::Result<Vec<f64>>>()?;
        likelihood.insert(key.domain_id.clone(), ScoreStat::from_sets(w1, p.patches_per_set, "mean over sets of W1(train tiles, target tiles)"));
        dists.push(DistributionDump { name: key.domain_id.clone(), statistic: stat_name.clone(), samples: sorted(&target_scores[0]) });

        let mut layer_scores = Vec::with_capacity(layers.len());
        for layer in &layers {
            let per_set = image_sets
                .iter()
                .map(|idx| {
                    let s = source_pass.means.select(idx).distributions(layer)?;
                    let t = pass.means.select(idx).distributions(layer)?;
                    Ok(layer_shift(layer, &s, &t)?.score)
                })
                .collect::<driftscope_core::Result<Vec<f64>>>()?;
            layer_scores.push(LayerScore {
                layer: layer.clone(),
                filters: widths[layer],
                score: ScoreStat::from_sets(per_set, p.patches_per_set, "mean over sets of mean-over-filters W1 of filter means"),
            });
        }
        dss.insert(key.domain_id.clone(), layer_scores);

        let confusions = pass
            .masks
            .iter()
            .zip(&data.test)
            .map(|(pred, (_, truth))| confusion_of(pred, truth))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<_> = image_sets.iter().map(|idx| pooled(&confusions, idx).f1()).collect();
        f1.insert(
            key.domain_id.clone(),
            F1Stat {
                undefined_sets: scores.iter().filter(|s| s.undefined).count(),
                score: ScoreStat::from_sets(scores.iter().map(|s| s.value).collect(), p.patches_per_set, "mean over sets of pooled pixel F1"),
            },
        );
    }

    let inputs = ReportInputs {
        seed: cfg.seed,
        config: cfg.clone(),
        protocol: ProtocolSummary {
            sets: p.sets,
            patches_per_set: p.patches_per_set,
            likelihood_statistic: cfg.density.statistic,
            tile: cfg.density.tile,
            headline_layer: p.headline_layer.clone(),
            layers,
            dss_pairing: "paired: each drawn source image against its own shifted copy".into(),
            f1_aggregation: "pooled (micro) pixel confusion per set".into(),
        },
        domains,
        likelihood_w1: likelihood,
        dss,
        f1,
        distributions: dists,
        timestamps: Some(Timestamps { started_unix_ms: started, finished_unix_ms: now_ms() }),
    };
    correlate_experiment(inputs)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Models and curves produced by a full in-memory run.
pub struct ExperimentRun {
    pub report: DomainShiftReport,
    pub density_curve: DensityCurve,
    pub task_curve: TaskCurve,
}

/// Generates data, trains both models and scores the sweep without touching disk.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let data = crate::dataset::synthesize(cfg)?;
    let (density, density_curve) = train_density_model(cfg, &data)?;
    let (task, task_curve) = train_task_model(cfg, &data)?;
    let report = score(cfg, &data, &density, &task)?;
    Ok(ExperimentRun { report, density_curve, task_curve })
}
