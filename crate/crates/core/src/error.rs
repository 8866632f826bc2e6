use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument fell outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Shapes of two operands disagree, or a structure is empty where it must not be.
    #[error("structural error: {0}")]
    Structure(String),

    /// A brute-force search would exceed its enumeration limits.
    #[error("instance too large for brute force: {0}")]
    TooLarge(String),

    #[error("invalid range: {0}")]
    Range(String),

    /// JSON syntax error in a scenario file.
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    /// Every semantic violation found while validating a scenario.
    #[error("invalid scenario: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// Stable short name used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Structure(_) => "structure",
            Error::TooLarge(_) => "too_large",
            Error::Range(_) => "range",
            Error::Syntax { .. } => "syntax",
            Error::Validation(_) => "validation",
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
        }
    }
}
