use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("dimension overflow: dims {dims:?} do not fit in memory")]
    DimensionOverflow { dims: Vec<u32> },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("unknown tensor dtype code {0}")]
    UnknownDtype(u8),

    #[error("tensor has unexpected layout: {0}")]
    TensorLayout(String),

    #[error("unsupported TIFF feature: tag {tag} ({name}) {detail}")]
    UnsupportedTiff {
        tag: u16,
        name: &'static str,
        detail: String,
    },

    #[error("TIFF decode error: {0}")]
    Tiff(#[from] tiff::TiffError),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("unknown channel {0:?}")]
    UnknownChannel(String),

    #[error("channel {name:?} requested {requested} times but source has {available}")]
    ChannelRepeats {
        name: String,
        requested: usize,
        available: usize,
    },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("expected {expected} patches, got {actual}")]
    PatchCount { expected: usize, actual: usize },

    #[error("patch {index} has size {actual:?}, expected {expected}x{expected}")]
    PatchSize {
        index: usize,
        expected: usize,
        actual: (usize, usize),
    },

    #[error("k_max {0} is not one of 0, 3, 5, 7, 9")]
    InvalidKMax(u32),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("channel count mismatch: model expects {expected}, image has {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("segmenter exited with code {code:?}; stderr tail:\n{stderr_tail}")]
    SegmenterExit {
        code: Option<i32>,
        stderr_tail: String,
    },

    #[error("segmenter timed out after {0} s")]
    SegmenterTimeout(u64),

    #[error("protocol violation in {path}: {detail}")]
    Protocol { path: PathBuf, detail: String },

    #[error("row {row} has {actual} cells, expected {expected}")]
    RaggedTable {
        row: usize,
        expected: usize,
        actual: usize,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
