use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Schema violations found while validating an NF model.
    #[error("model has {} schema violation(s): {}", .0.len(), .0.join("; "))]
    Schema(Vec<String>),
    #[error("hash input of {input_bits} bits needs a key of at least {needed} bits, key has {key_bits}")]
    InputTooLong {
        input_bits: usize,
        key_bits: usize,
        needed: usize,
    },
    #[error("field set `{0}` does not apply to this packet")]
    FieldsetInapplicable(String),
    #[error("interface {0} is not configured")]
    UnconfiguredInterface(u16),
    #[error("no supported field set covers {0}")]
    NoFieldset(String),
    /// `best` is the highest-scoring rejected candidate, if any was produced.
    #[error("no acceptable key: {reason}")]
    NoAcceptableKey {
        reason: String,
        best: Option<Box<crate::rss::RssConfigBundle>>,
    },
    #[error("configuration does not match model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
