use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },

    #[error("invalid dataset: {}", .0.join("; "))]
    Dataset(Vec<String>),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("agreement error: {0}")]
    Agreement(String),

    #[error("missing scene graph for meme {0} (no file and no empty marker)")]
    MissingGraph(String),

    #[error("knowledge base cache miss for query {0:?} in replay mode")]
    CacheMiss(String),

    #[error("knowledge base request failed after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },

    #[error("serialization error: {0}")]
    Serialize(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { loss: f64, epoch: usize, batch: usize },

    #[error("metric error: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }

    /// Whether this error came from reading or writing files, as opposed to
    /// bad content. The command line maps this onto its exit codes.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Network { .. })
    }
}
