use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: timestamps not strictly increasing at row {row} ({detail})")]
    Monotonicity {
        path: String,
        row: usize,
        detail: String,
    },

    #[error("missing values exceed threshold {threshold}: {}", fmt_fractions(.fractions))]
    ExcessMissing {
        threshold: f64,
        fractions: Vec<(String, f64)>,
    },

    #[error("insufficient data: need at least {required} rows, found {found}")]
    InsufficientData { required: usize, found: usize },

    #[error("column '{0}' is constant on the fitting rows; cannot standardize")]
    ConstantColumn(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { expected: u32, found: u32 },

    #[error("checkpoint shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("malformed file {path}: {message}")]
    Malformed { path: String, message: String },

    #[error("incompatible checkpoint: {field} expected {expected}, found {found}")]
    Incompatible {
        field: String,
        expected: String,
        found: String,
    },

    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: String,
        epoch: usize,
        batch: usize,
    },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_fractions(fr: &[(String, f64)]) -> String {
    fr.iter()
        .map(|(c, f)| format!("{c}={f:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by the caller's inputs (files, configuration) rather than
    /// an internal failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::Dimension { .. }
                | Error::Contract(_)
                | Error::NonFinite { .. }
                | Error::NonFiniteGradient(_)
        )
    }
}
