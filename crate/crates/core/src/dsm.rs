//! Domain shift metric over a task network's filter activations.
//!
//! For layer `l` and filter `k`, every patch `x` is summarized by the spatial
//! mean `c_lk(x)` of its activation map. Collecting `c_lk` over a source set
//! and a target set gives two empirical distributions per filter; the layer
//! score `R_l` is the mean over filters of their order-1 Wasserstein
//! distances. Identical sets score exactly zero.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::empirical::{wasserstein1, EmpiricalDistribution};
use crate::error::{Error, Result};
use crate::patch::ImagePatch;
use crate::segment::Segmenter;
use crate::stats;

/// Activations of one filter of one layer for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap {
    layer: String,
    filter: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ActivationMap {
    pub fn new(layer: impl Into<String>, filter: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Invalid(format!("{} values for a {height}x{width} activation map", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("activation map"));
        }
        Ok(Self { layer: layer.into(), filter, height, width, values })
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn filter(&self) -> usize {
        self.filter
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn spatial_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `c_lk(x) = (1 / (h w)) sum_ij Phi_lk(x)_ij`.
pub fn filter_mean(act: &ActivationMap) -> f64 {
    spatial_mean(&act.values)
}

/// Filter means of every exposed layer for a set of patches.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterMeans {
    count: usize,
    /// `(name, filters, row-major [patch][filter] means)`
    layers: Vec<(String, usize, Vec<f64>)>,
}

const FEATURE_BATCH: usize = 32;

impl FilterMeans {
    pub fn compute(model: &Segmenter, patches: &[ImagePatch]) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::Empty("patch set"));
        }
        let names = model.layer_names();
        let widths = model.config().layer_widths();
        let mut layers: Vec<(String, usize, Vec<f64>)> =
            names.into_iter().zip(widths).map(|(n, k)| (n, k, Vec::with_capacity(patches.len() * k))).collect();
        for chunk in patches.chunks(FEATURE_BATCH) {
            let out = model.forward_batch(chunk)?;
            for ((_, _, means), (_, act)) in layers.iter_mut().zip(&out.activations) {
                let plane = act.shape()[2] * act.shape()[3];
                means.extend(act.data().chunks(plane).map(spatial_mean));
            }
        }
        Ok(Self { count: patches.len(), layers })
    }

    /// Builds from precomputed per-layer `[patch][filter]` means.
    pub fn from_parts(count: usize, layers: Vec<(String, usize, Vec<f64>)>) -> Result<Self> {
        for (name, k, m) in &layers {
            if m.len() != count * k {
                return Err(Error::Invalid(format!("layer `{name}`: {} means for {count} x {k}", m.len())));
            }
        }
        Ok(Self { count, layers })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|(n, _, _)| n.as_str())
    }

    fn layer(&self, name: &str) -> Result<(usize, &[f64])> {
        self.layers
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, k, m)| (*k, m.as_slice()))
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    /// Means of the given patches, in the given order (indices may repeat).
    pub fn select(&self, indices: &[usize]) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|(n, k, m)| {
                let sel = indices.iter().flat_map(|&i| m[i * k..(i + 1) * k].iter().copied()).collect();
                (n.clone(), *k, sel)
            })
            .collect();
        Self { count: indices.len(), layers }
    }

    /// One distribution per filter of `layer`, each holding one sample per patch.
    pub fn distributions(&self, layer: &str) -> Result<Vec<EmpiricalDistribution>> {
        let (k, means) = self.layer(layer)?;
        (0..k)
            .map(|f| EmpiricalDistribution::new(means.iter().skip(f).step_by(k).copied().collect()))
            .collect()
    }
}

/// Per-filter distributions `{c_lk(x) : x in patches}` for one layer.
pub fn collect_filter_means(model: &Segmenter, patches: &[ImagePatch], layer: &str) -> Result<Vec<EmpiricalDistribution>> {
    if !model.layer_names().iter().any(|n| n == layer) {
        return Err(Error::UnknownLayer(layer.to_string()));
    }
    FilterMeans::compute(model, patches)?.distributions(layer)
}

/// `R_l` for one layer together with its per-filter distances.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerShiftScore {
    pub layer: String,
    pub score: f64,
    pub per_filter: Vec<f64>,
}

/// Mean over filters of the per-filter Wasserstein distances.
pub fn layer_shift(
    layer: &str,
    source: &[EmpiricalDistribution],
    target: &[EmpiricalDistribution],
) -> Result<LayerShiftScore> {
    if source.len() != target.len() || source.is_empty() {
        return Err(Error::Invalid(format!(
            "layer `{layer}`: {} source vs {} target filters",
            source.len(),
            target.len()
        )));
    }
    let per_filter: Vec<f64> = source.iter().zip(target).map(|(s, t)| wasserstein1(s, t)).collect();
    let score = stats::mean(&per_filter);
    Ok(LayerShiftScore { layer: layer.to_string(), score, per_filter })
}

pub fn dsm_from_means(source: &FilterMeans, target: &FilterMeans, layers: &[&str]) -> Result<Vec<LayerShiftScore>> {
    layers
        .iter()
        .map(|&l| layer_shift(l, &source.distributions(l)?, &target.distributions(l)?))
        .collect()
}

/// Domain shift scores between two patch sets for each requested layer.
pub fn dsm(
    model: &Segmenter,
    source: &[ImagePatch],
    target: &[ImagePatch],
    layers: &[&str],
) -> Result<Vec<LayerShiftScore>> {
    let known = model.layer_names();
    if let Some(bad) = layers.iter().find(|l| !known.iter().any(|k| k == *l)) {
        return Err(Error::UnknownLayer(bad.to_string()));
    }
    let s = FilterMeans::compute(model, source)?;
    let t = FilterMeans::compute(model, target)?;
    dsm_from_means(&s, &t, layers)
}

/// Mean and sample standard deviation of `R_l` over independently scored sets.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DssSummary {
    pub layer: String,
    pub mean: f64,
    pub std: f64,
    pub per_set: Vec<f64>,
}

impl DssSummary {
    pub fn from_scores(layer: &str, per_set: Vec<f64>) -> Result<Self> {
        if per_set.is_empty() {
            return Err(Error::Empty("target sets"));
        }
        Ok(Self { layer: layer.to_string(), mean: stats::mean(&per_set), std: stats::sample_std(&per_set), per_set })
    }
}

/// `R_l` of each target set against a fixed source set, summarized.
pub fn averaged_dss(
    model: &Segmenter,
    source: &[ImagePatch],
    target_sets: &[Vec<ImagePatch>],
    layer: &str,
) -> Result<DssSummary> {
    if target_sets.is_empty() {
        return Err(Error::Empty("target sets"));
    }
    let s = FilterMeans::compute(model, source)?;
    let src = s.distributions(layer)?;
    let per_set = target_sets
        .iter()
        .map(|t| {
            let t = FilterMeans::compute(model, t)?;
            Ok(layer_shift(layer, &src, &t.distributions(layer)?)?.score)
        })
        .collect::<Result<Vec<f64>>>()?;
    DssSummary::from_scores(layer, per_set)
}

/// `R_l` for paired source/target sets (`source_sets[i]` vs `target_sets[i]`).
pub fn averaged_dss_paired(source_sets: &[FilterMeans], target_sets: &[FilterMeans], layer: &str) -> Result<DssSummary> {
    if source_sets.len() != target_sets.len() {
        return Err(Error::Invalid(format!("{} source sets vs {} target sets", source_sets.len(), target_sets.len())));
    }
    let per_set = source_sets
        .iter()
        .zip(target_sets)
        .map(|(s, t)| Ok(layer_shift(layer, &s.distributions(layer)?, &t.distributions(layer)?)?.score))
        .collect::<Result<Vec<f64>>>()?;
    DssSummary::from_scores(layer, per_set)
}
