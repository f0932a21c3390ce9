use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate article id `{id}` at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("article `{0}` has an empty body")]
    EmptyDocument(String),
    #[error("article `{0}` has not been tokenized")]
    Untokenized(String),
    #[error("keyword set is empty")]
    EmptyKeywordSet,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("embeddings line {line}: expected {expected} values, found {found}")]
    EmbeddingLine {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("no gold label for article `{0}`")]
    MissingGold(String),
    #[error("unknown article id `{0}`")]
    UnknownArticle(String),
    #[error("invalid label for `{id}`: {message}")]
    InvalidLabel { id: String, message: String },
    #[error("{0}")]
    InvalidInput(String),
    #[error("group {group}: {message}")]
    Statistics { group: usize, message: String },
    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error(transparent)]
    Model(#[from] ndlearn::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
