use std::path::{Path, PathBuf};

use driftscope_core::Error as CoreError;

/// Errors surfaced by the pipeline and the command line.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Config(String),
    #[error("missing artifact {}: {detail}", path.display())]
    MissingArtifact { path: PathBuf, detail: String },
    #[error("{0}")]
    Protocol(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

impl AppError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        let path = path.as_ref().to_path_buf();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Self::MissingArtifact { path, detail: source.to_string() };
        }
        Self::Io { path, source }
    }

    pub fn format(path: impl AsRef<Path>, detail: impl ToString) -> Self {
        Self::Format { path: path.as_ref().to_path_buf(), detail: detail.to_string() }
    }

    /// Process exit code: 2 config, 3 missing artifact, 4 numerical failure,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Protocol(_) => 2,
            Self::MissingArtifact { .. } | Self::Format { .. } => 3,
            Self::Numerical(_) => 4,
            Self::Io { .. } => 1,
            Self::Core(e) => match e {
                CoreError::Numerical(_) | CoreError::NonFinite(_) | CoreError::ZeroVariance(_) => 4,
                CoreError::Checkpoint(_) => 3,
                _ => 2,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "missing-artifact",
            4 => "numerical",
            _ => "io",
        }
    }
}
