use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The variants map onto the CLI exit codes: argument and input problems
/// exit with 2, provider problems with 3 and training divergence with 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("empty response from provider: {0}")]
    EmptyResponse(String),

    #[error("training diverged{}: {reason}", fold.map(|k| format!(" on fold {k}")).unwrap_or_default())]
    TrainingDiverged { fold: Option<usize>, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures caused by an external service.
    pub fn is_provider(&self) -> bool {
        matches!(self, Error::ProviderUnavailable(_) | Error::EmptyResponse(_))
    }

    /// Prefixes a context string onto provider errors, leaving others alone.
    pub fn with_context(self, ctx: &str) -> Self {
        match self {
            Error::ProviderUnavailable(m) => Error::ProviderUnavailable(format!("{ctx}: {m}")),
            Error::EmptyResponse(m) => Error::EmptyResponse(format!("{ctx}: {m}")),
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{ctx}: {m}")),
            Error::Precondition(m) => Error::Precondition(format!("{ctx}: {m}")),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
