use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("bad magic bytes {found:?}, expected \"MATF\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported MATF version {0}")]
    UnsupportedVersion(u8),

    #[error("unknown dtype code {0:#04x}")]
    UnknownDtype(u8),

    #[error("truncated tensor: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("shape {shape:?} implies {expected} elements but data has {found}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("expected a rank-2 tensor, got rank {0}")]
    NotRank2(usize),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("layer {layer}: expected {expected} rows (one per sample), found {found}")]
    RowMismatch {
        layer: u32,
        expected: usize,
        found: usize,
    },

    #[error("missing feature file for layer {0}")]
    MissingLayer(u32),

    #[error(
        "layer mismatch: train has {train:?}, test has {test:?} (only in train: {:?}, only in test: {:?})",
        only_in(train, test),
        only_in(test, train)
    )]
    LayerMismatch { train: Vec<u32>, test: Vec<u32> },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("need at least {required} samples, got {found}")]
    InsufficientSamples { required: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("undefined: {0}")]
    Undefined(&'static str),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn only_in(a: &[u32], b: &[u32]) -> Vec<u32> {
    a.iter().copied().filter(|x| !b.contains(x)).collect()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than by
    /// the environment (I/O). The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Json(_) | Error::Csv(_))
    }
}
