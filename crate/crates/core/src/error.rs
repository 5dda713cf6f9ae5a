//! Error taxonomy shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or rank mismatch; the message names both offending shapes.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid tier structure (non-increasing depths, bad tier index, ...).
    #[error("topology error: {0}")]
    Topology(String),

    /// Invalid dataset contents or dataset/partition mismatch.
    #[error("data error: {0}")]
    Data(String),

    /// Invalid or inconsistent experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values or invalid numeric arguments; aborts the round.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed binary file (checkpoint or dataset).
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// Stable machine-readable kind tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Topology(_) => "topology",
            Error::Data(_) => "data",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
        }
    }
}
