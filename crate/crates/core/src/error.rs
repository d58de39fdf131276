use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar([usize; 4]),

    #[error("compute graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("scale {0} is not supported (expected 2, 4 or 8)")]
    UnsupportedScale(u32),

    #[error("requested scale {requested} exceeds the model scale {model}")]
    ScaleExceedsModel { requested: u32, model: u32 },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Image(#[from] ImageError),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("non-finite loss at iteration {iteration} (epoch {epoch}): {value}")]
    NonFiniteLoss {
        iteration: u64,
        epoch: u64,
        value: f64,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unexpected end of checkpoint")]
    UnexpectedEof,
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("parameter table does not match the model configuration: {0}")]
    ShapeTable(String),
    #[error("invalid model configuration in checkpoint: {0}")]
    Config(String),
    #[error("trailing bytes after the last parameter record")]
    TrailingData,
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported bit depth: {0} bits per sample")]
    UnsupportedBitDepth(u8),
    #[error("unsupported color type {0}")]
    UnsupportedColorType(String),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("image dimensions {width}x{height} are invalid")]
    Dimensions { width: usize, height: usize },
}
