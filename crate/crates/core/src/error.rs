use thiserror::Error;

/// Errors produced by the library and the CLI.
///
/// The variants are grouped so the CLI can map them onto its exit codes:
/// schema problems exit with 2, numerical failures with 3 and
/// under-constrained geometry with 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error in {context}: {message}")]
    Schema { context: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("under-constrained: {0}")]
    UnderConstrained(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn schema(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema { .. } | Error::Shape(_) | Error::InvalidArgument(_) => 2,
            Error::Numerical(_) => 3,
            Error::Degenerate(_) | Error::UnderConstrained(_) => 4,
            Error::Io { .. } => 1,
        }
    }
}
