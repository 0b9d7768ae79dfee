use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the domain of a shape or severity function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Steering angle reached the tan(δ) singularity.
    #[error("steering singularity: |delta| = {delta} is within 1e-3 of pi/2{}", interval.map(|k| format!(" (interval {k})")).unwrap_or_default())]
    Singularity { delta: f64, interval: Option<usize> },

    #[error("invalid solver input: {0}")]
    SolverInput(String),

    #[error("invalid problem specification: {0}")]
    InvalidSpec(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("malformed artifact {file}: {message}")]
    Artifact { file: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn with_interval(self, k: usize) -> Self {
        match self {
            Error::Singularity { delta, .. } => Error::Singularity {
                delta,
                interval: Some(k),
            },
            other => other,
        }
    }
}
