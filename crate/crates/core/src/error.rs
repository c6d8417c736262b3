use std::path::PathBuf;

/// Every failure the library can surface.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("capacity error: dims {0:?} overflow addressable size")]
    Capacity([usize; 4]),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("non-finite value produced by `{op}` in layer `{scope}`")]
    NonFinite { op: &'static str, scope: String },

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("checkpoint corrupted: {0}")]
    Corrupt(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
