use std::path::PathBuf;

/// Errors produced anywhere in the pruning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("cholesky factorization failed for {layer}: matrix is not positive definite")]
    NotPositiveDefinite { layer: String },

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("invalid token sequence: {0}")]
    Sequence(String),

    #[error("corpus too small: {0}")]
    Corpus(String),

    #[error("invalid sparsity level {0}: must satisfy 0 <= level < 1")]
    Level(f64),

    #[error("method {method} requires {needed} statistics, which were not supplied")]
    MissingStats {
        method: &'static str,
        needed: &'static str,
    },

    #[error("unknown pruning method {0:?} (valid: magnitude, neg_magnitude, wanda, sparsegpt, mama)")]
    UnknownMethod(String),

    #[error("unknown fixture {0:?} (valid: table1, table2)")]
    UnknownFixture(String),

    #[error("format version mismatch: {0}")]
    Version(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("{0}")]
    Invalid(String),

    #[error("{context}: {source}")]
    Cell {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap with a context prefix, e.g. the sweep cell that failed.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Cell {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
