use std::path::PathBuf;

/// Errors produced by the sessionminer library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty vocabulary: no event occurs in at least {min_frac} of {n_sessions} sessions")]
    EmptyVocabulary { min_frac: f64, n_sessions: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("k = {k} exceeds the number of points ({n})")]
    TooManyClusters { k: usize, n: usize },

    #[error("silhouette requires at least 2 clusters, got {0}")]
    SilhouetteNeedsTwoClusters(usize),

    #[error("cluster {0} has no category in the category map")]
    UnmappedCluster(usize),

    #[error("classes absent from training data: {}", .0.join(", "))]
    MissingClasses(Vec<String>),

    #[error("model format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("malformed model file at line {line}: {reason}")]
    MalformedModel { line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoBare(#[from] std::io::Error),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
