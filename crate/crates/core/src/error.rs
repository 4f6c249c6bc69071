use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("structure contains no complete backbone residues")]
    EmptyStructure,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("index {index} out of range for {len} atoms")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("atom {atom} at ({x:.3}, {y:.3}, {z:.3}) lies outside the density grid margin")]
    OutOfGrid { atom: usize, x: f64, y: f64, z: f64 },

    #[error("non-finite value at reverse step {step}")]
    Diverged { step: usize, last_finite: Vec<f64> },

    #[error("invariant violated at step {step}: {message}")]
    Invariant { step: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::EmptyStructure => "empty_structure",
            Error::Dimension { .. } => "dimension",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::OutOfGrid { .. } => "out_of_grid",
            Error::Diverged { .. } => "diverged",
            Error::Invariant { .. } => "invariant",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
