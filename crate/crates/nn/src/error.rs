use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ego3dpose_core::Error),
    #[error("tensor op failed: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{layer}: {reason}")]
    Shape { layer: String, reason: String },
    #[error("checkpoint {field}: {reason}")]
    Checkpoint { field: String, reason: String },
    #[error("stage {stage} step {step}: non-finite loss ({detail})")]
    NonFinite { stage: u8, step: usize, detail: String },
    #[error("unknown variant `{0}` (expected B, B+PH, B+SM or B+PH+SM)")]
    UnknownVariant(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) => e.kind(),
            Error::Tensor(_) => "tensor",
            Error::Config(_) => "config",
            Error::Shape { .. } => "shape",
            Error::Checkpoint { .. } => "checkpoint",
            Error::NonFinite { .. } => "non_finite",
            Error::UnknownVariant(_) => "config",
            Error::Parameter(_) => "parameter",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn shape(layer: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Shape { layer: layer.into(), reason: reason.into() }
    }

    pub(crate) fn checkpoint(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Checkpoint { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}
