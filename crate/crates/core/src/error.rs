use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{file}:{line}: {field}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("{file}:{line}: expected {expected} joints, found {found}")]
    JointCount {
        file: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid partition scheme: {0}")]
    Scheme(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("backward called on {0}")]
    Backward(String),

    #[error("no clusters formed this epoch")]
    NoClusters,

    #[error("training aborted: no clusters for {0} consecutive epochs")]
    ClusteringCollapsed(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
