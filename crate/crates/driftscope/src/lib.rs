//! Datasets, checkpoints, the scoring pipeline, reports and the command line
//! for the `driftscope` domain shift toolkit.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{AppError, Result};
pub use report::DomainShiftReport;
