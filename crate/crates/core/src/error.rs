use alloc::string::String;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("loss must be a scalar, got {numel} elements")]
    NonScalarLoss { numel: usize },
    #[error("quantization mismatch: model expects {expected} levels, patch has {found}")]
    Quantization { expected: u16, found: u16 },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}
