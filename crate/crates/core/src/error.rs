use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected {expected:?}, got {actual:?}")]
    LayerShape {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: Vec<usize>, actual: Vec<usize> },

    #[error("invalid tensor: shape {shape:?} holds {expected} values but {actual} were given")]
    TensorLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("activation cache does not belong to this network: {0}")]
    StaleActivations(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("distribution is not normalized: {0}")]
    NotNormalized(String),

    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("checksum mismatch: expected {expected}, found {found}")]
    Checksum { expected: String, found: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short stable identifier, used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::LayerShape { .. } | Error::Shape { .. } | Error::TensorLength { .. } => "shape",
            Error::InvalidNetwork(_) => "invalid-network",
            Error::StaleActivations(_) => "stale-activations",
            Error::LabelOutOfRange { .. } => "label-range",
            Error::InvalidData(_) => "invalid-data",
            Error::EmptyDataset => "empty-dataset",
            Error::Config(_) => "config",
            Error::NotNormalized(_) => "not-normalized",
            Error::BadMagic { .. } => "bad-magic",
            Error::Truncated { .. } => "truncated",
            Error::CountMismatch { .. } => "count-mismatch",
            Error::Version { .. } => "version",
            Error::Corrupt { .. } => "corrupt",
            Error::ArchitectureMismatch(_) => "architecture-mismatch",
            Error::Checksum { .. } => "checksum",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
