use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid class count {0}: at least 2 classes are required")]
    InvalidClassCount(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("degenerate feature at row {row}: norm {norm:e} is below the floor")]
    DegenerateFeature { row: usize, norm: f64 },

    #[error("margin {0} is outside [0, pi)")]
    Margin(f64),

    #[error("invalid loss parameter: {0}")]
    LossParameter(String),

    #[error("malformed classifier weights: {0}")]
    Structure(String),

    #[error("stale forward cache: produced at generation {cache}, model is at {model}")]
    StaleCache { cache: u64, model: u64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("bad IDX magic {found:#010x} in {path} (expected {expected:#010x})")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated IDX file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
