use thiserror::Error;

/// Errors raised anywhere in the segmentation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid UTF-8 on line {line}")]
    Decode { line: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed input: {0}")]
    MalformedInput(String),

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unknown criterion `{name}` (available: {})", available.join(", "))]
    UnknownCriterion { name: String, available: Vec<String> },

    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),

    #[error("refusing brute-force enumeration over {n} positions (limit {limit})")]
    EnumerationTooLarge { n: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad model file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
