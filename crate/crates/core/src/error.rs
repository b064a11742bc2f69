use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("index mismatch: {0}")]
    IndexMismatch(String),
    #[error("neighbor table has no pdf values")]
    NotEstimated,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("protocol requires normals but the cloud has none")]
    MissingNormals,
    #[error("input {index}: {source}")]
    AtInput {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
