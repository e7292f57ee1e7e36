use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration values or an unusable combination of inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// A call argument outside the accepted domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Shapes, dimensions or parameter sets that do not match what a
    /// component expects.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("character {ch:?} (U+{:04X}) is not in the charset", *.ch as u32)]
    Vocabulary { ch: char },

    #[error("background asset `{0}` not found")]
    MissingAsset(String),

    #[error("unsupported checkpoint format version `{0}`")]
    UnsupportedVersion(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's configuration rather than by
    /// a failure while doing the work.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Argument(_)
                | Error::Vocabulary { .. }
                | Error::MissingAsset(_)
                | Error::UnsupportedVersion(_)
        )
    }
}
