use std::path::PathBuf;

/// Errors raised anywhere in the label pipeline, the network or the trainer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("shape error in {kind}: {message}")]
    Shape { kind: &'static str, message: String },

    #[error("character {ch:?} at offset {offset} is not in the vocabulary")]
    Vocabulary { ch: char, offset: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("incompatible checkpoint: {message} ({})", names.join(", "))]
    Compatibility { message: String, names: Vec<String> },

    #[error(
        "non-finite loss at iteration {iteration} (lr {lr:e}); largest gradient norms: {}",
        grad_norms.iter().map(|(n, v)| format!("{n}={v:e}")).collect::<Vec<_>>().join(", ")
    )]
    NonFinite {
        iteration: usize,
        lr: f64,
        grad_norms: Vec<(String, f64)>,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(kind: &'static str, message: impl Into<String>) -> Self {
        Error::Shape {
            kind,
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
