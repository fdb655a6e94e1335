use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failures raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("backward called twice without a new forward pass")]
    TapeConsumed,
    #[error("backward root must be a scalar node, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("parameter layout diverges at `{name}`: {reason}")]
    ParamMismatch { name: String, reason: String },
    #[error("{what} is empty")]
    Empty { what: &'static str },
    #[error("{what}: need at least {needed}, got {got}")]
    TooShort {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("length mismatch in {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("time {t} s outside trajectory range [0, {duration}] s")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("streams are not synchronized: {0}")]
    Unsynchronized(String),
    #[error("sample-rate drift of {drift_percent:.3}% between CSI and pose streams exceeds 1%")]
    RateDrift { drift_percent: f64 },
    #[error("frame {frame}: prediction has zero spread and cannot be aligned")]
    DegeneratePose { frame: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}
