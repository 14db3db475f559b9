//! Network-facing ingestion: validation, session checks, durable commit.

mod store;

pub use store::{
    AckStatus, CommitListener, EventStore, IngestAck, StoreConfig, StoreError, Subscription,
};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::Value;

use crate::model::{validate_event, TraceEvent, ValidationError, Vocabulary};
use crate::sessions::SessionRegistry;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("session `{0}` is unknown")]
    SessionUnknown(String),
    #[error("session `{0}` is closed")]
    SessionClosed(String),
    #[error("event belongs to session `{event}`, not `{expected}`")]
    SessionMismatch { expected: String, event: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Validates wire documents against the vocabulary and session directory,
/// then commits them to the [`EventStore`].
pub struct IngestService {
    store: Arc<EventStore>,
    sessions: Arc<SessionRegistry>,
    vocabulary: Arc<Vocabulary>,
}

impl IngestService {
    pub fn new(store: Arc<EventStore>, sessions: Arc<SessionRegistry>, vocabulary: Arc<Vocabulary>) -> Self {
        Self {
            store,
            sessions,
            vocabulary,
        }
    }

    pub fn store(&self) -> &Arc<EventStore> {
        &self.store
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    /// Ingests one raw event into `session_id`.
    pub fn ingest(&self, raw: &Value, session_id: &str) -> Result<IngestAck, IngestError> {
        let event = self.check(raw, Some(session_id))?;
        self.store.append(vec![event]).remove(0).map_err(Into::into)
    }

    /// Ingests a batch; each document names its own session. Results are
    /// positional and independent.
    pub fn ingest_batch(&self, raws: &[Value]) -> Vec<Result<IngestAck, IngestError>> {
        let mut out: Vec<Option<Result<IngestAck, IngestError>>> = Vec::with_capacity(raws.len());
        let mut valid = Vec::new();
        let mut slots = Vec::new();
        for raw in raws {
            match self.check(raw, None) {
                Ok(e) => {
                    slots.push(out.len());
                    out.push(None);
                    valid.push(e);
                }
                Err(e) => out.push(Some(Err(e))),
            }
        }
        for (slot, res) in slots.into_iter().zip(self.store.append(valid)) {
            out[slot] = Some(res.map_err(Into::into));
        }
        out.into_iter().map(|r| r.expect("every slot filled")).collect()
    }

    /// Commits an engine-generated event for a session.
    pub fn record(&self, event: TraceEvent) -> Result<IngestAck, IngestError> {
        self.check_session(&event)?;
        self.store.append(vec![event]).remove(0).map_err(Into::into)
    }

    /// Builds and commits an engine-generated event for `session_id`.
    pub fn emit(
        &self,
        session_id: &str,
        action: &str,
        target: &str,
        payload: BTreeMap<String, Value>,
    ) -> Result<IngestAck, IngestError> {
        let session = self
            .sessions
            .get(session_id)
            .ok_or_else(|| IngestError::SessionUnknown(session_id.to_owned()))?;
        let action = self
            .vocabulary
            .resolve(action)
            .ok_or_else(|| ValidationError::UnknownAction(action.to_owned()))?;
        self.record(TraceEvent {
            event_id: format!("srv-{}", uuid::Uuid::new_v4().simple()),
            session_id: session.session_id,
            learner_id: session.learner_id,
            experiment_id: session.experiment_id,
            client_timestamp_ms: self.store.now_ms() as i64,
            server_seq: 0,
            server_time_ms: 0,
            action,
            target: target.to_owned(),
            payload,
        })
    }

    fn check(&self, raw: &Value, session_id: Option<&str>) -> Result<TraceEvent, IngestError> {
        let event = validate_event(raw, &self.vocabulary)?;
        if let Some(sid) = session_id {
            if event.session_id != sid {
                return Err(IngestError::SessionMismatch {
                    expected: sid.to_owned(),
                    event: event.session_id,
                });
            }
        }
        self.check_session(&event)?;
        Ok(event)
    }

    fn check_session(&self, event: &TraceEvent) -> Result<(), IngestError> {
        let session = self
            .sessions
            .get(&event.session_id)
            .ok_or_else(|| IngestError::SessionUnknown(event.session_id.clone()))?;
        if !session.is_active() {
            return Err(IngestError::SessionClosed(event.session_id.clone()));
        }
        if session.learner_id != event.learner_id || session.experiment_id != event.experiment_id {
            return Err(IngestError::Validation(ValidationError::InvalidField {
                field: "learner_id".into(),
                reason: format!(
                    "event identity ({}, {}) does not match session ({}, {})",
                    event.learner_id, event.experiment_id, session.learner_id, session.experiment_id
                ),
            }));
        }
        Ok(())
    }
}

/// Where engine components write the trace events they generate.
pub trait TraceSink: Send + Sync {
    fn emit(
        &self,
        session_id: &str,
        action: &str,
        target: &str,
        payload: BTreeMap<String, Value>,
    ) -> Result<IngestAck, IngestError>;
}

impl TraceSink for IngestService {
    fn emit(
        &self,
        session_id: &str,
        action: &str,
        target: &str,
        payload: BTreeMap<String, Value>,
    ) -> Result<IngestAck, IngestError> {
        IngestService::emit(self, session_id, action, target, payload)
    }
}
