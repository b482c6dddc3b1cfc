use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid objective: {0}")]
    InvalidObjective(String),

    #[error("cell ({ix}, {iy}) is outside the {nx}x{ny} grid")]
    OutOfRange {
        ix: usize,
        iy: usize,
        nx: usize,
        ny: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite observation at ({ix}, {iy})")]
    NonFinite { ix: usize, iy: usize },

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("game protocol violation: {0}")]
    Protocol(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("no results found in {0}")]
    EmptyResults(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
