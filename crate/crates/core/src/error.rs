use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index {index} out of range for table with {len} rows")]
    Index { index: usize, len: usize },

    #[error("softmax row {row} is fully masked")]
    FullyMasked { row: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("objective returned a non-finite value ({0})")]
    NonFinite(f64),

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("overlapping entity spans: {0}")]
    Overlap(String),

    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("synthetic generation infeasible: {0}")]
    Infeasible(String),

    #[error("cannot sample {k} pages from a pool of {pool}")]
    PoolTooSmall { k: usize, pool: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds the maximum packed length {max}")]
    TooLong { len: usize, max: usize },

    #[error("gold token at target position {position} is not in the candidate set")]
    MissingGold { position: usize },

    #[error("not a checkpoint file")]
    NotCheckpoint,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("decoding failed: {0}")]
    Decode(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Parse { path: path.into(), source }
    }
}
