use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("layer {index} ({name}): {source}")]
    Layer {
        index: usize,
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("degenerate batch: batchnorm in train mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("backward requires a tape recorded in train mode")]
    TapeNotTrainMode,

    #[error("invalid label {0}: expected 0 or 1")]
    InvalidLabel(f64),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("{path}: row {row}: {reason}")]
    ManifestParse {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("duplicate path in manifest: {0}")]
    DuplicatePath(String),

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("bad PPM magic in {0}: expected P6")]
    PpmMagic(PathBuf),

    #[error("PPM {path}: expected {expected}x{expected}, found {width}x{height}")]
    PpmDimensions {
        path: PathBuf,
        expected: usize,
        width: usize,
        height: usize,
    },

    #[error("PPM {0}: truncated pixel data")]
    PpmTruncated(PathBuf),

    #[error("PPM {path}: {reason}")]
    PpmHeader { path: PathBuf, reason: String },

    #[error("checkpoint: bad magic")]
    BadMagic,

    #[error("checkpoint: unsupported version {0}")]
    VersionMismatch(u16),

    #[error("checkpoint: truncated file")]
    Truncated,

    #[error("checkpoint: tensor `{name}` has shape {found:?}, descriptor expects {expected:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn at_layer(self, index: usize, name: &str) -> Self {
        match self {
            e @ Error::Layer { .. } => e,
            e => Error::Layer {
                index,
                name: name.to_string(),
                source: Box::new(e),
            },
        }
    }
}
