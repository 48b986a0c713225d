use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::param_table::BlockId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("primitive index {index} out of range (n = {n})")]
    PrimitiveOutOfRange { index: u64, n: u64 },

    #[error("block {block} out of range (k = {k})")]
    BlockOutOfRange { block: BlockId, k: u32 },

    #[error("coordinate {value} does not fit in {bits} bits")]
    MortonRange { value: u64, bits: u32 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient for primitive {primitive}, attribute {attribute}")]
    NonFiniteGradient { primitive: usize, attribute: usize },

    #[error("working set exceeds capacity: {needed} blocks visible, arena holds {capacity}")]
    WorkingSetExceedsCapacity { needed: usize, capacity: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("corrupt segment {}: {detail}", path.display())]
    Corrupt { path: PathBuf, detail: String },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("staging failed: {0}")]
    Staging(Box<Error>),

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
