use crate::admin::AdminError;
use crate::agents::ChatError;
use crate::collab::CollabError;
use crate::ingest::{IngestError, StoreError};
use crate::model::{SessionError, ValidationError};
use crate::scaffold::ScaffoldError;
use crate::sessions::RegistryError;
use crate::writing::WritingError;

/// Coarse error classes, used by transports to pick a status code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Invalid,
    Conflict,
    Forbidden,
    Unavailable,
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error(transparent)]
    Scaffold(#[from] ScaffoldError),
    #[error(transparent)]
    Writing(#[from] WritingError),
    #[error(transparent)]
    Collab(#[from] CollabError),
    #[error(transparent)]
    Admin(#[from] AdminError),
    #[error("{kind} `{id}` is unknown")]
    ResourceUnknown { kind: &'static str, id: String },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("storage: {0}")]
    Io(String),
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        EngineError::Ingest(IngestError::Store(e))
    }
}

impl From<ValidationError> for EngineError {
    fn from(e: ValidationError) -> Self {
        EngineError::Ingest(IngestError::Validation(e))
    }
}

impl From<std::io::Error> for EngineError {
    fn from(e: std::io::Error) -> Self {
        EngineError::Io(e.to_string())
    }
}

impl EngineError {
    pub fn tool_disabled(tool: &str, group: &str) -> Self {
        EngineError::Admin(AdminError::ToolDisabled {
            tool: tool.to_owned(),
            group: group.to_owned(),
        })
    }

    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Ingest(e) => match e {
                IngestError::SessionUnknown(_) => "SessionUnknown",
                IngestError::SessionClosed(_) => "SessionClosed",
                IngestError::SessionMismatch { .. } => "SessionMismatch",
                IngestError::Validation(_) => "ValidationError",
                IngestError::Store(StoreError::Closed) => "StoreClosed",
                IngestError::Store(_) => "StorageError",
            },
            EngineError::Session(e) => match e {
                SessionError::TaskAlreadyStarted(_) => "TaskAlreadyStarted",
                SessionError::IllegalPhase { .. } => "IllegalPhase",
                SessionError::NotActive => "SessionClosed",
            },
            EngineError::Registry(e) => match e {
                RegistryError::Exists(_) => "SessionExists",
                RegistryError::Unknown(_) => "SessionUnknown",
                RegistryError::Io(_) => "StorageError",
            },
            EngineError::Chat(e) => match e {
                ChatError::ChatUnknown(_) => "ChatUnknown",
                ChatError::ChatExists(_) => "ChatExists",
                ChatError::AgentUnknown(_) => "AgentUnknown",
                ChatError::DuplicateAgentId(_) => "DuplicateAgentId",
                ChatError::EmptyAgentList => "EmptyAgentList",
                ChatError::InvalidAgent { .. } => "InvalidAgent",
                ChatError::Trace(_) => "TraceError",
            },
            EngineError::Scaffold(e) => match e {
                ScaffoldError::SessionUnknown(_) => "SessionUnknown",
                ScaffoldError::RuleUnknown(_) => "RuleUnknown",
                ScaffoldError::TemplateUnknown(_) => "TemplateUnknown",
                ScaffoldError::UnboundSlot(_) => "UnboundSlot",
                ScaffoldError::AlreadyIssued { .. } => "AlreadyIssued",
                ScaffoldError::MessageUnknown(_) => "MessageUnknown",
                ScaffoldError::TaskNotStarted(_) => "TaskNotStarted",
                ScaffoldError::Persist(_) => "StorageError",
                ScaffoldError::Trace(_) => "TraceError",
            },
            EngineError::Writing(e) => match e {
                WritingError::GatewayUnavailable(_) => "GatewayUnavailable",
                WritingError::UnparseableReply { .. } => "UnparseableReply",
                WritingError::InvalidRubric(_) => "InvalidRubric",
            },
            EngineError::Collab(e) => match e {
                CollabError::DocUnknown(_) => "DocUnknown",
                CollabError::DocExists(_) => "DocExists",
                CollabError::StaleBase { .. } => "StaleBase",
                CollabError::BaseAhead { .. } => "BaseAhead",
                CollabError::RevisionUnknown { .. } => "RevisionUnknown",
                CollabError::InvalidOp(_) => "InvalidOp",
                CollabError::Trace(_) => "TraceError",
            },
            EngineError::Admin(e) => match e {
                AdminError::ExperimentUnknown(_) => "ExperimentUnknown",
                AdminError::ExperimentStarted(_) => "ExperimentStarted",
                AdminError::UnknownTool(_) => "UnknownTool",
                AdminError::Validation(_) => "ValidationError",
                AdminError::SessionUnknown(_) => "SessionUnknown",
                AdminError::NoEvents(_) => "NoEvents",
                AdminError::InvalidStrategy(_) => "InvalidStrategy",
                AdminError::ToolDisabled { .. } => "ToolDisabled",
            },
            EngineError::ResourceUnknown { kind, .. } => match *kind {
                "lexicon" => "LexiconMissing",
                "rubric" => "RubricUnknown",
                "source set" => "SourceSetUnknown",
                _ => "ResourceUnknown",
            },
            EngineError::Invalid(_) => "ValidationError",
            EngineError::Config(_) => "ConfigError",
            EngineError::Io(_) => "StorageError",
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self.code() {
            "SessionUnknown" | "ChatUnknown" | "AgentUnknown" | "RuleUnknown" | "TemplateUnknown" | "MessageUnknown"
            | "DocUnknown" | "ExperimentUnknown" | "LexiconMissing" | "RubricUnknown" | "SourceSetUnknown"
            | "ResourceUnknown" | "RevisionUnknown" => ErrorKind::NotFound,
            "SessionExists" | "ChatExists" | "DocExists" | "AlreadyIssued" | "ExperimentStarted" | "SessionClosed"
            | "TaskAlreadyStarted" | "IllegalPhase" | "StaleBase" | "BaseAhead" | "TaskNotStarted" => {
                ErrorKind::Conflict
            }
            "ToolDisabled" => ErrorKind::Forbidden,
            "GatewayUnavailable" | "UnparseableReply" | "StoreClosed" => ErrorKind::Unavailable,
            "StorageError" | "TraceError" | "ConfigError" | "UnboundSlot" => ErrorKind::Internal,
            _ => ErrorKind::Invalid,
        }
    }
}
