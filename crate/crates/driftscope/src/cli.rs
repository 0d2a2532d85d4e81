//! Subcommand implementations and argument parsing.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use driftscope_core::density::DensityCurve;
use driftscope_core::segment::TaskCurve;

use crate::artifacts;
use crate::config::ExperimentConfig;
use crate::dataset::{self, Dataset, Manifest};
use crate::error::{AppError, Result};
use crate::pipeline;
use crate::report::{self, DomainShiftReport};

#[derive(Debug, Parser)]
#[command(name = "driftscope", version, about = "Quantify domain shift with likelihood and feature-statistics detectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset (PNG images, masks and manifest).
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Overwrite an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Train the density model on tiles of the training split.
    TrainDensity {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the segmentation model.
    TrainTask {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the shift sweep with trained checkpoints and write the report.
    Score {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Re-render CSV tables and histogram files from a report JSON.
    Report {
        /// Path to an existing report.json.
        #[arg(long)]
        input: PathBuf,
        /// Output directory; defaults to the report's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Scalar overrides shared by every pipeline subcommand.
#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// Experiment config JSON; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides DRIFTSCOPE_SEED and the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Root directory for data, models and report.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Dataset directory (overrides the config's input_dir).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Worker threads for scoring.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl CommonArgs {
    /// Resolves the effective config: flag, then environment, then file, then defaults.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_env()?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(d) = &self.data_dir {
            cfg.dataset.input_dir = Some(d.clone());
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn cmd_synth(cfg: &ExperimentConfig, force: bool) -> Result<Manifest> {
    let data = dataset::synthesize(cfg)?;
    dataset::write_dataset(&cfg.data_dir(), &data, Some(cfg.seed), Some(&cfg.dataset.generator), force)
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = cfg.data_dir();
    if !dir.join(dataset::MANIFEST).exists() {
        return Err(AppError::MissingArtifact {
            path: dir.join(dataset::MANIFEST),
            detail: "dataset not found; run `driftscope synth` first".into(),
        });
    }
    let (manifest, data) = dataset::read_dataset(&dir)?;
    dataset::check_compatible(&manifest, cfg)?;
    Ok(data)
}

pub fn cmd_train_density(cfg: &ExperimentConfig) -> Result<DensityCurve> {
    let data = load_dataset(cfg)?;
    let (model, curve) = pipeline::train_density_model(cfg, &data)?;
    artifacts::save_density(&cfg.models_dir(), &model, cfg.density.tile, &pipeline::density_train_config(cfg), &curve)?;
    Ok(curve)
}

pub fn cmd_train_task(cfg: &ExperimentConfig) -> Result<TaskCurve> {
    let data = load_dataset(cfg)?;
    let (model, curve) = pipeline::train_task_model(cfg, &data)?;
    artifacts::save_task(&cfg.models_dir(), &model, &pipeline::task_train_config(cfg), &curve, &cfg.protocol.headline_layer)?;
    Ok(curve)
}

pub fn cmd_score(cfg: &ExperimentConfig) -> Result<DomainShiftReport> {
    let data = load_dataset(cfg)?;
    let (density, sidecar) = artifacts::load_density(&cfg.models_dir())?;
    if sidecar.tile != cfg.density.tile {
        return Err(AppError::Config(format!(
            "density checkpoint was trained on {}-pixel tiles, config asks for {}",
            sidecar.tile, cfg.density.tile
        )));
    }
    let (task, _) = artifacts::load_task(&cfg.models_dir())?;
    let report = pipeline::score(cfg, &data, &density, &task)?;
    report::emit_report(&report, &cfg.report_dir())?;
    Ok(report)
}

pub fn cmd_report(input: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let report = report::read_report(input)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
    report::render_tables(&report, &dir)
}

fn summarize(report: &DomainShiftReport) -> String {
    let mut lines = vec![format!("{} domains scored", report.domains.len())];
    for c in &report.correlations {
        lines.push(match (c.pearson, &c.omitted_reason) {
            (Some(p), _) => format!("pearson({}, f1) = {p:.4} over {} domains", c.score, c.points),
            (None, Some(r)) => format!("pearson({}, f1) omitted: {r}", c.score),
            _ => format!("pearson({}, f1) unavailable", c.score),
        });
    }
    lines.join("\n")
}

/// Executes a parsed command, returning the text to print on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Synth { common, force } => {
            let cfg = common.resolve()?;
            let m = cmd_synth(&cfg, force)?;
            Ok(format!(
                "wrote {} train, {} valid, {} test samples to {}",
                m.train.len(),
                m.valid.len(),
                m.test.len(),
                cfg.data_dir().display()
            ))
        }
        Command::TrainDensity { common } => {
            let cfg = common.resolve()?;
            let curve = cmd_train_density(&cfg)?;
            Ok(format!(
                "density model trained: final train {:.4} bpd, valid {:.4} bpd",
                curve.train_bpd.last().copied().unwrap_or(f64::NAN),
                curve.valid_bpd.last().copied().unwrap_or(f64::NAN)
            ))
        }
        Command::TrainTask { common } => {
            let cfg = common.resolve()?;
            let curve = cmd_train_task(&cfg)?;
            Ok(format!(
                "task model trained: final loss {:.4}, valid F1 {:.4}",
                curve.train_loss.last().copied().unwrap_or(f64::NAN),
                curve.valid_f1.last().map(|f| f.value).unwrap_or(f64::NAN)
            ))
        }
        Command::Score { common } => {
            let cfg = common.resolve()?;
            let report = cmd_score(&cfg)?;
            Ok(format!("{}\nreport written to {}", summarize(&report), cfg.report_dir().display()))
        }
        Command::Report { input, out } => {
            let written = cmd_report(&input, out.as_deref())?;
            Ok(format!("wrote {} files", written.len()))
        }
    }
}

/// Single-line, machine-parsable error message.
pub fn error_line(e: &AppError) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("driftscope: error code={} kind={}: {msg}", e.exit_code(), e.kind())
}
