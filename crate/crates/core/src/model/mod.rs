//! Domain types shared by every subsystem.

pub mod action;
pub mod canonical;
pub mod event;
pub mod session;
pub mod taxonomy;

pub use action::{ActionType, Vocabulary};
pub use canonical::{to_canonical_bytes, to_canonical_string};
pub use event::{canonical_serialize, parse_event, validate_event, TraceEvent};
pub use session::{Phase, SessionError, SessionState, SessionStatus};
pub use taxonomy::{ModelProfile, SrlProcessTaxonomy};

/// Rejection of a wire document. Each variant names the offending field.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("document is not a JSON object")]
    NotAnObject,
    #[error("malformed JSON: {0}")]
    Syntax(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("malformed timestamp in `{0}`")]
    MalformedTimestamp(String),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
}
