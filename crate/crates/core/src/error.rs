use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("local training diverged at iteration {iteration} (client {client:?})")]
    Divergence {
        client: Option<usize>,
        iteration: usize,
    },

    #[error("missing report for client {0}")]
    MissingReport(usize),

    #[error("fedavg requires uniform tau, got {0:?}")]
    NonUniformTau(Vec<u32>),

    #[error("idx: bad magic number {found:#010x} in {path}, expected {expected:#010x}")]
    IdxMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("idx: truncated file {path}: {detail}")]
    IdxTruncated { path: PathBuf, detail: String },

    #[error("idx: image count {images} does not match label count {labels}")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("frame: unknown tag {0:#04x}")]
    FrameTag(u8),

    #[error("frame: truncated, need {needed} bytes, have {available}")]
    FrameTruncated { needed: usize, available: usize },

    #[error("frame: length field says {declared} bytes but payload decodes to {consumed}")]
    FrameLength { declared: usize, consumed: usize },

    #[error("frame: payload of {0} bytes exceeds the 2^31 limit")]
    FrameTooLarge(usize),

    #[error("frame: {0}")]
    FrameMalformed(String),

    #[error("round {round} aborted: client {client}: {reason}")]
    RoundAborted {
        round: u32,
        client: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
