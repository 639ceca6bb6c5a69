use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("optimizer error on parameter `{name}`: {reason}")]
    Optimizer { name: String, reason: String },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate record at line {line}: frame {frame}, pedestrian {ped}")]
    DuplicateRecord { line: usize, frame: i64, ped: i64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model build error: {0}")]
    Build(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint at byte offset {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("refusing to evaluate unlabeled samples: {0}")]
    Unlabeled(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
