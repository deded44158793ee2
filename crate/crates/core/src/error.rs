use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    /// Cell-level parse failure; row/column are 1-based positions in the file
    /// (the header is row 1).
    #[error("unparseable cell at row {row}, column {column} ({name}): {value:?}")]
    BadCell {
        row: usize,
        column: usize,
        name: String,
        value: String,
    },

    #[error("categorical label {label:?} in column {column:?} is not part of the declared category set")]
    UnknownLabel { column: String, label: String },

    #[error("header mismatch: {0}")]
    HeaderMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("output variance is zero (constant output)")]
    ConstantOutput,

    #[error("covariance matrix is not symmetric positive definite{0}")]
    NotPositiveDefinite(String),

    #[error("subset table is empty: the forest never split, which signals a degenerate fit")]
    EmptySubsetTable,

    #[error("kernel weight is undefined for subset size {u_size} at p = {p}")]
    DegenerateSubsetSize { p: usize, u_size: usize },

    #[error("regression system is rank-deficient: variables {missing:?} appear in no sampled subset")]
    MissingVariables { missing: Vec<usize> },

    #[error("regression system is rank-deficient: the reduced normal matrix is singular")]
    SingularSystem,

    #[error("regression system has {rows} rows but at least {needed} are required")]
    TooFewRows { rows: usize, needed: usize },

    #[error("no rows carry a prediction (empty out-of-bag coverage)")]
    NoCoverage,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("exact enumeration supports at most p = {max}, got p = {p}")]
    EnumerationTooLarge { p: usize, max: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
