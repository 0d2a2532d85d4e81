//! Domain shift report: assembly, correlation analysis and file emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use driftscope_core::density::LikelihoodStatistic;
use driftscope_core::shift::ShiftKind;
use driftscope_core::stats;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{AppError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT_JSON: &str = "report.json";
pub const DOMAINS_CSV: &str = "domains.csv";
pub const LAYERS_CSV: &str = "dss_layers.csv";
pub const HIST_DIR: &str = "histograms";
pub const MIN_CORRELATION_POINTS: usize = 3;

/// Domain id of the unshifted test set.
pub const SOURCE_DOMAIN: &str = "source";

/// A score aggregated over independently drawn sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreStat {
    pub mean: f64,
    /// Sample standard deviation over sets.
    pub std: f64,
    pub sets: usize,
    pub samples_per_set: usize,
    pub aggregation: String,
    pub per_set: Vec<f64>,
}

impl ScoreStat {
    pub fn from_sets(per_set: Vec<f64>, samples_per_set: usize, aggregation: &str) -> Self {
        Self {
            mean: stats::mean(&per_set),
            std: stats::sample_std(&per_set),
            sets: per_set.len(),
            samples_per_set,
            aggregation: aggregation.to_string(),
            per_set,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer: String,
    pub filters: usize,
    pub score: ScoreStat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Stat {
    pub score: ScoreStat,
    /// Sets whose pooled confusion had no positives at all (F1 reported as 0).
    pub undefined_sets: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainKey {
    pub domain_id: String,
    /// Absent for the unshifted source domain.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kind: Option<ShiftKind>,
    pub severity_index: usize,
    pub severity: SeverityRepr,
}

/// Severity stored as a float with a stable textual form for ids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeverityRepr(pub f64);

impl Eq for SeverityRepr {}

impl DomainKey {
    pub fn source() -> Self {
        Self { domain_id: SOURCE_DOMAIN.into(), kind: None, severity_index: 0, severity: SeverityRepr(0.0) }
    }

    pub fn shifted(kind: ShiftKind, severity_index: usize, severity: f64) -> Self {
        Self { domain_id: format!("{kind}@{severity}"), kind: Some(kind), severity_index, severity: SeverityRepr(severity) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainEntry {
    #[serde(flatten)]
    pub key: DomainKey,
    pub likelihood_w1: ScoreStat,
    pub dss: Vec<LayerScore>,
    pub f1: F1Stat,
}

impl DomainEntry {
    pub fn dss_for(&self, layer: &str) -> Option<&ScoreStat> {
        self.dss.iter().find(|l| l.layer == layer).map(|l| &l.score)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// `likelihood_w1` or `dss:<layer>`.
    pub score: String,
    pub against: String,
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pearson: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spearman: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub omitted_reason: Option<String>,
}

/// Sorted per-patch samples of one distribution, for external plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionDump {
    pub name: String,
    pub statistic: String,
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub sets: usize,
    pub patches_per_set: usize,
    pub likelihood_statistic: LikelihoodStatistic,
    pub tile: usize,
    pub headline_layer: String,
    pub layers: Vec<String>,
    pub dss_pairing: String,
    pub f1_aggregation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub protocol: ProtocolSummary,
    pub domains: Vec<DomainEntry>,
    pub correlations: Vec<Correlation>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub distributions: Vec<DistributionDump>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timestamps: Option<Timestamps>,
}

impl DomainShiftReport {
    pub fn domain(&self, id: &str) -> Option<&DomainEntry> {
        self.domains.iter().find(|d| d.key.domain_id == id)
    }

    pub fn correlation(&self, score: &str) -> Option<&Correlation> {
        self.correlations.iter().find(|c| c.score == score)
    }

    pub fn headline_correlation(&self) -> Option<&Correlation> {
        self.correlation(&format!("dss:{}", self.protocol.headline_layer))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// The JSON with timestamps removed, for reproducibility comparisons.
    pub fn to_json_without_timestamps(&self) -> String {
        let mut r = self.clone();
        r.timestamps = None;
        r.to_json()
    }
}

/// Everything the analysis needs, keyed by domain id.
#[derive(Clone, Debug)]
pub struct ReportInputs {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub protocol: ProtocolSummary,
    pub domains: Vec<DomainKey>,
    pub likelihood_w1: BTreeMap<String, ScoreStat>,
    pub dss: BTreeMap<String, Vec<LayerScore>>,
    pub f1: BTreeMap<String, F1Stat>,
    pub distributions: Vec<DistributionDump>,
    pub timestamps: Option<Timestamps>,
}

fn missing_keys<V>(branch: &str, expected: &BTreeSet<&str>, map: &BTreeMap<String, V>, out: &mut Vec<String>) {
    for k in expected {
        if !map.contains_key(*k) {
            out.push(format!("{branch}: missing `{k}`"));
        }
    }
    for k in map.keys() {
        if !expected.contains(k.as_str()) {
            out.push(format!("{branch}: unexpected `{k}`"));
        }
    }
}

/// Correlation of one score column against F1, or the reason it was omitted.
pub fn correlate(score: &str, xs: &[f64], f1: &[f64]) -> Correlation {
    let mut c =
        Correlation { score: score.to_string(), against: "f1_mean".into(), points: xs.len(), pearson: None, spearman: None, omitted_reason: None };
    if xs.len() < MIN_CORRELATION_POINTS {
        c.omitted_reason = Some(format!("{} domain(s); at least {MIN_CORRELATION_POINTS} required", xs.len()));
        return c;
    }
    match (stats::pearson(xs, f1), stats::spearman(xs, f1)) {
        (Ok(p), Ok(s)) => {
            c.pearson = Some(p);
            c.spearman = Some(s);
        }
        (Err(e), _) | (_, Err(e)) => c.omitted_reason = Some(e.to_string()),
    }
    c
}

/// Joins per-domain scores into a report and computes the branch correlations.
pub fn correlate_experiment(inputs: ReportInputs) -> Result<DomainShiftReport> {
    let expected: BTreeSet<&str> = inputs.domains.iter().map(|d| d.domain_id.as_str()).collect();
    if expected.len() != inputs.domains.len() {
        return Err(AppError::Protocol("duplicate domain ids".into()));
    }
    let mut missing = Vec::new();
    missing_keys("likelihood_w1", &expected, &inputs.likelihood_w1, &mut missing);
    missing_keys("dss", &expected, &inputs.dss, &mut missing);
    missing_keys("f1", &expected, &inputs.f1, &mut missing);
    if !missing.is_empty() {
        return Err(AppError::Protocol(format!("report inputs disagree on domain keys: {}", missing.join("; "))));
    }
    let (mut lik, mut dss, mut f1) = (inputs.likelihood_w1, inputs.dss, inputs.f1);
    let domains: Vec<DomainEntry> = inputs
        .domains
        .into_iter()
        .map(|key| DomainEntry {
            likelihood_w1: lik.remove(&key.domain_id).expect("checked"),
            dss: dss.remove(&key.domain_id).expect("checked"),
            f1: f1.remove(&key.domain_id).expect("checked"),
            key,
        })
        .collect();
    let f1s: Vec<f64> = domains.iter().map(|d| d.f1.score.mean).collect();
    let mut correlations = vec![correlate(
        "likelihood_w1",
        &domains.iter().map(|d| d.likelihood_w1.mean).collect::<Vec<_>>(),
        &f1s,
    )];
    for layer in &inputs.protocol.layers {
        let xs = domains
            .iter()
            .map(|d| {
                d.dss_for(layer)
                    .map(|s| s.mean)
                    .ok_or_else(|| AppError::Protocol(format!("domain `{}` lacks layer `{layer}`", d.key.domain_id)))
            })
            .collect::<Result<Vec<f64>>>()?;
        correlations.push(correlate(&format!("dss:{layer}"), &xs, &f1s));
    }
    Ok(DomainShiftReport {
        schema_version: SCHEMA_VERSION,
        seed: inputs.seed,
        config: inputs.config,
        protocol: inputs.protocol,
        domains,
        correlations,
        distributions: inputs.distributions,
        timestamps: inputs.timestamps,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn domains_csv(report: &DomainShiftReport) -> String {
    let mut out = String::from("domain_id,severity,likelihood_w1,dss_mean,dss_std,f1_mean,f1_std\n");
    for d in &report.domains {
        let (dm, ds) = d
            .dss_for(&report.protocol.headline_layer)
            .map(|s| (s.mean.to_string(), s.std.to_string()))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{dm},{ds},{},{}",
            d.key.domain_id, d.key.severity.0, d.likelihood_w1.mean, d.f1.score.mean, d.f1.score.std
        )
        .unwrap();
    }
    out
}

pub fn layers_csv(report: &DomainShiftReport) -> String {
    let mut out = String::from("domain_id,layer,dss_mean,dss_std\n");
    for d in &report.domains {
        for l in &d.dss {
            writeln!(out, "{},{},{},{}", d.key.domain_id, l.layer, l.score.mean, l.score.std).unwrap();
        }
    }
    out
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

/// Writes `report.json`, the CSV tables and one sorted-sample file per
/// distribution under `dir`. Returns the written paths.
pub fn emit_report(report: &DomainShiftReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let mut written = Vec::new();
    let json = dir.join(REPORT_JSON);
    write(&json, &report.to_json())?;
    written.push(json);
    written.extend(render_tables(report, dir)?);
    Ok(written)
}

/// Writes only the CSV tables and histogram files.
pub fn render_tables(report: &DomainShiftReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let mut written = Vec::new();
    for (name, text) in [(DOMAINS_CSV, domains_csv(report)), (LAYERS_CSV, layers_csv(report))] {
        let p = dir.join(name);
        write(&p, &text)?;
        written.push(p);
    }
    if !report.distributions.is_empty() {
        let hist = dir.join(HIST_DIR);
        std::fs::create_dir_all(&hist).map_err(|e| AppError::io(&hist, e))?;
        for d in &report.distributions {
            let mut text = format!("{}\n", d.statistic);
            for v in &d.samples {
                writeln!(text, "{v}").unwrap();
            }
            let p = hist.join(format!("{}.csv", file_stem(&d.name)));
            write(&p, &text)?;
            written.push(p);
        }
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<DomainShiftReport> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let report: DomainShiftReport = serde_json::from_str(&text).map_err(|e| AppError::format(path, e))?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(AppError::format(path, format!("unsupported schema_version {}", report.schema_version)));
    }
    Ok(report)
}
