//! Crate-wide error type.
//!
//! Two failure families matter to callers: invalid inputs/artifacts
//! (rejected up front, CLI exit code 1) and numerical failures detected
//! mid-computation (CLI exit code 2).

use thiserror::Error;

/// Unified error type for graph construction, solvers, model code, and I/O.
#[derive(Debug, Error)]
pub enum EmrError {
    /// Caller-supplied value violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Matrix/vector shapes are inconsistent.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A node index fell outside `[0, n)`.
    #[error("node index {index} out of range for graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    /// Dense oracle requested on a graph above the configured cap.
    #[error("dense solve requested for n={n}, above cap {cap}")]
    DenseCapExceeded { n: usize, cap: usize },

    /// A numerical routine produced an unusable result (non-finite values,
    /// residual above tolerance, divergence). Exit code 2 at the CLI.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Underlying file I/O failure, annotated with the path.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Text-format parse failure with 1-based line/column coordinates.
    #[error("parse error at {path}:{line}:{col}: {msg}")]
    Parse {
        path: String,
        line: usize,
        col: usize,
        msg: String,
    },
}

impl EmrError {
    /// Convenience constructor for `InvalidInput`.
    pub fn invalid(msg: impl Into<String>) -> Self {
        EmrError::InvalidInput(msg.into())
    }

    /// Convenience constructor for `Numerical`.
    pub fn numerical(msg: impl Into<String>) -> Self {
        EmrError::Numerical(msg.into())
    }

    /// Wrap an I/O error with the offending path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        EmrError::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code for this error: 1 for validation, 2 for numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            EmrError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, EmrError>;
