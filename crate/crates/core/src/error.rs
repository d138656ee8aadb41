use std::path::PathBuf;

/// Errors raised anywhere in the pipeline. Every variant knows which module
/// produced it so the command line can name the failing stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{module}: non-finite value in {what} at index {index}")]
    NonFinite {
        module: &'static str,
        what: String,
        index: usize,
    },

    #[error("{module}: {msg}")]
    Invalid { module: &'static str, msg: String },

    #[error("{module}: {path}: {source}")]
    Io {
        module: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{module}: {path}: {msg}")]
    Format {
        module: &'static str,
        path: PathBuf,
        msg: String,
    },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("trainer: loss became non-finite at iteration {iteration}; last good checkpoint: {checkpoint}")]
    Diverged { iteration: usize, checkpoint: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(module: &'static str, path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            module,
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(module: &'static str, path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            module,
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Name of the module that raised the error.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "diffcore",
            Error::NonFinite { module, .. }
            | Error::Invalid { module, .. }
            | Error::Io { module, .. }
            | Error::Format { module, .. } => module,
            Error::Config { .. } => "sceneio",
            Error::Diverged { .. } => "trainer",
        }
    }
}
