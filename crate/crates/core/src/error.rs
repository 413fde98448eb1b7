use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("corrupted pooling indices: {0}")]
    Corruption(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("{path}: format error at byte offset {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },
    #[error("weight file does not match graph:\n  {}", .0.join("\n  "))]
    WeightMismatch(Vec<String>),
    #[error("training diverged in stage `{stage}` at iteration {iter}: loss = {loss}")]
    Diverged {
        stage: String,
        iter: usize,
        loss: f64,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: png: {msg}")]
    Png { path: PathBuf, msg: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, axis: &'static str, expected: usize, found: usize) -> Self {
        Error::Shape {
            op,
            axis,
            expected,
            found,
        }
    }
}
