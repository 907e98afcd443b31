//! Error taxonomy. Shape violations are programmer errors and panic;
//! everything recoverable or environment-driven lands here.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum StradiffError {
    /// Cholesky factorization failed; `pivot` is the zero-based index of the
    /// first non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    /// A non-finite value surfaced where the numerics must stay finite.
    #[error("numerical fault: {context}")]
    NumericalFault { context: String },

    /// A mixing-matrix column collapsed to zero, so it cannot be normalized.
    #[error("degenerate mixing: column {column} has zero norm")]
    DegenerateMixing { column: usize },

    /// Malformed or missing input data (CSV contents, checkpoint payload).
    #[error("data error: {0}")]
    Data(String),

    /// Bad configuration (unknown key, unparsable value, invalid range).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl StradiffError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        StradiffError::Io { path: path.into(), source }
    }

    pub fn numerical(context: impl Into<String>) -> Self {
        StradiffError::NumericalFault { context: context.into() }
    }

    /// Process exit code for the CLI: 2 for data problems, 3 for numerical
    /// faults (config/usage errors exit 1 before reaching here).
    pub fn exit_code(&self) -> i32 {
        match self {
            StradiffError::Data(_) | StradiffError::Io { .. } => 2,
            StradiffError::Config(_) => 1,
            StradiffError::NotPositiveDefinite { .. }
            | StradiffError::NumericalFault { .. }
            | StradiffError::DegenerateMixing { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, StradiffError>;
