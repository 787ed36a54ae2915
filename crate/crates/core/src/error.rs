use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed EDF header: {0}")]
    EdfHeader(String),
    #[error("EDF signals use different sampling rates ({0} Hz vs {1} Hz)")]
    MixedSamplingRates(f64, f64),
    #[error("EDF data truncated: expected {expected} bytes of records, found {found}")]
    EdfTruncated { expected: usize, found: usize },
    #[error("channel `{0}` not present in recording")]
    MissingChannel(String),
    #[error("duplicate channel name `{0}`")]
    DuplicateChannel(String),
    #[error("label file line {line}: {msg}")]
    LabelFormat { line: usize, msg: String },
    #[error("unknown class name `{0}`")]
    UnknownClass(String),
    #[error("labels intervals overlap: [{0}, {1}) and [{2}, {3})")]
    OverlappingIntervals(usize, usize, usize, usize),
    #[error("interval [{start}, {end}) outside recording of {len} samples")]
    IntervalOutOfRange { start: usize, end: usize, len: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class {0} is absent from the training labels; inverse weighting is undefined")]
    AbsentClass(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward called without a matching training forward pass")]
    NoForwardCache,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unsupported window length {0} s (expected 2, 4, 8, 16 or 32)")]
    UnsupportedWindow(u32),
    #[error("unknown architecture `{0}` (valid: 2s, 4s, 8s, 16s, 32s, 16s_u, 16s_1c, cnn_lstm)")]
    UnknownArchitecture(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sampler exhausted: {requested} windows requested, {remaining} left in this iteration")]
    SamplerExhausted { requested: usize, remaining: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}
