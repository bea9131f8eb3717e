use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range for {what} (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("degenerate limb: zero-length relative vector")]
    DegenerateLimb,

    #[error("projection undefined: {0}")]
    Projection(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid skeleton: {0}")]
    Skeleton(String),

    #[error("pose sampling failed: {0}")]
    Sampling(String),

    #[error("format error in `{field}`: {reason}")]
    Format { field: String, reason: String },

    #[error("procrustes alignment failed: {0}")]
    Alignment(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable snake-case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Index { .. } => "index",
            Error::DegenerateLimb => "degenerate_limb",
            Error::Projection(_) => "projection",
            Error::Parameter(_) => "parameter",
            Error::Skeleton(_) => "skeleton",
            Error::Sampling(_) => "sampling",
            Error::Format { .. } => "format",
            Error::Alignment(_) => "alignment",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
