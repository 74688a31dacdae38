use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("cannot binarize NaN at index {index}")]
    NanLatent { index: usize },

    #[error("value {value} at index {index} is not a sign (expected -1 or +1)")]
    NotASign { index: usize, value: f32 },

    #[error("grid corner {corner:?} out of range for resolution {resolution}")]
    CornerOutOfRange { corner: Vec<u32>, resolution: u32 },

    #[error("forward cache is stale: produced at parameter generation {cached}, parameters are at {current}")]
    StaleCache { cached: u64, current: u64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite loss at iteration {iter} (lr {lr:.3e}, {rays} rays, {samples} samples)")]
    NonFiniteLoss {
        iter: usize,
        lr: f32,
        rays: usize,
        samples: usize,
    },

    #[error("snapshot format error: {0}")]
    Format(#[from] FormatError),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Problems decoding or encoding a `.birf` snapshot.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?} (expected \"BIRF\")")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("payload checksum mismatch: header says {expected:#010x}, payload hashes to {found:#010x}")]
    Checksum { expected: u32, found: u32 },

    #[error("file truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("packed bit length inconsistent: {bits} bits need {expected} bytes, got {found}")]
    PackedLength {
        bits: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid header field {field}: {reason}")]
    Header { field: &'static str, reason: String },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}
