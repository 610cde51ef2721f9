use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("timestep {tau} outside [1, {max}]")]
    TimestepOutOfRange { tau: usize, max: usize },
    #[error("step must decrease the timestep (from {from} to {to})")]
    NonDecreasingStep { from: usize, to: usize },
    #[error("invalid count: {0}")]
    InvalidCount(String),
    #[error("invalid region fractions: {0}")]
    InvalidFractions(String),
    #[error("skip factor must be >= 1, got {0}")]
    InvalidSkip(usize),
    #[error("linear system is not positive definite (pivot {pivot})")]
    SingularSystem { pivot: usize },
    #[error("invalid denoiser spec: {0}")]
    InvalidSpec(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("header declares {declared} frames, payload holds {actual}")]
    CountMismatch { declared: u64, actual: u64 },
    #[error("attention map must be square, got {q}x{k}")]
    BadShape { q: usize, k: usize },
    #[error("non-finite value at index {0}")]
    NonFiniteValue(usize),
    #[error("negative attention score at index {0}")]
    NegativeValue(usize),
    #[error("empty region: {0}")]
    EmptyRegion(String),
    #[error("stream holds no frames")]
    EmptyStream,
    #[error("malformed csv at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error("sink failed after {written} frames: {source}")]
    SinkFailure {
        written: u64,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}
