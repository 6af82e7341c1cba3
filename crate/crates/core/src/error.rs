//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("no observed labels in batch")]
    NoObservedLabels,

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("frozen batch-norm invariant violated in layer `{layer}` tensor `{tensor}`")]
    FrozenInvariantViolated { layer: String, tensor: String },

    #[error("no node provides a head for label `{0}`")]
    MissingHead(String),

    #[error("unknown label `{0}`")]
    Label(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("generator error: {0}")]
    Generator(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("node {node} failed in round {round}: {source}")]
    Node {
        node: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::EmptyBatch => "empty_batch",
            Error::DegenerateBatch(_) => "degenerate_batch",
            Error::NonFinite(_) => "non_finite",
            Error::NoObservedLabels => "no_observed_labels",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Protocol(_) => "protocol",
            Error::FrozenInvariantViolated { .. } => "frozen_invariant_violated",
            Error::MissingHead(_) => "missing_head",
            Error::Label(_) => "label",
            Error::Split(_) => "split",
            Error::Generator(_) => "generator",
            Error::Parse { .. } => "parse",
            Error::Metric(_) => "metric",
            Error::Input(_) => "input",
            Error::Checkpoint(_) => "checkpoint",
            Error::Node { .. } => "node",
            Error::Io(_) => "io",
            Error::Serde(_) => "serde",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
