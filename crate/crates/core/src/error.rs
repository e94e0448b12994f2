use std::path::PathBuf;

use thiserror::Error;

use crate::model::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid value: {0}")]
    Validation(String),

    #[error("sequence of length {len} exceeds window {window}")]
    Window { len: usize, window: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    /// Training loss or gradients went non-finite. Carries the best checkpoint
    /// seen so far, if any epoch completed.
    #[error("training diverged at step {step}: {detail}")]
    Diverged {
        step: u64,
        detail: String,
        last_good: Option<Box<Checkpoint>>,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("incompatible artifacts: {0}")]
    Compatibility(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status for command-line front ends: 3 for numerical
    /// failures, 4 for I/O, 2 for everything else (bad input, config or
    /// incompatible artifacts).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::Diverged { .. } => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
