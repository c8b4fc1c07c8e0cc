use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{what} out of range: {detail}")]
    Range { what: String, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("pixel (row {row}, col {col}) has zero total weight; add a view (or a background region) covering it")]
    Coverage { row: usize, col: usize },

    #[error("invalid plan: {0}")]
    Plan(String),

    #[error(
        "gradient descent did not converge: gradient norm {grad_norm:e} after {iters} iterations"
    )]
    Convergence { grad_norm: f64, iters: usize },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn range(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Range {
            what: what.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
