use thiserror::Error;

/// Error taxonomy shared by every module in the workspace.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid values or shapes fed to an operation.
    #[error("domain: {0}")]
    Domain(String),
    /// Inconsistent or incomplete configuration.
    #[error("config: {0}")]
    Config(String),
    /// Training failed (divergence, degenerate dataset).
    #[error("training: {0}")]
    Train(String),
    /// Malformed or inconsistent artifact/file contents.
    #[error("data: {0}")]
    Data(String),
    /// Remote classification failed in a non-recoverable way.
    #[error("network: {0}")]
    Network(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn train(msg: impl Into<String>) -> Self {
        Error::Train(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn network(msg: impl Into<String>) -> Self {
        Error::Network(msg.into())
    }

    /// Stable one-word category, used for machine-parsable CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Train(_) => "training",
            Error::Data(_) => "data",
            Error::Network(_) => "network",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
