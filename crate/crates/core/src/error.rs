use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("infeasible distance matrix: {0}")]
    Infeasible(String),
    #[error("degenerate distance between nodes {i} and {j}")]
    DegenerateDistance { i: usize, j: usize },
    #[error("cannot normalize a field with zero variance")]
    Normalization,
    #[error("diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
