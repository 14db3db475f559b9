use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::action::{ActionType, Vocabulary};
use super::canonical;
use super::ValidationError;

/// Maximum identifier length in bytes.
pub const MAX_ID_BYTES: usize = 128;

/// One timestamped learner action.
///
/// `client_timestamp_ms` is advisory. Ordering comes from `server_seq` and
/// timing from `server_time_ms`, both assigned at commit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub event_id: String,
    pub session_id: String,
    pub learner_id: String,
    pub experiment_id: String,
    pub client_timestamp_ms: i64,
    pub server_seq: u64,
    pub server_time_ms: u64,
    pub action: ActionType,
    pub target: String,
    pub payload: BTreeMap<String, Value>,
}

const KNOWN_FIELDS: &[&str] = &[
    "event_id",
    "session_id",
    "learner_id",
    "experiment_id",
    "client_timestamp_ms",
    "server_seq",
    "server_time_ms",
    "action",
    "target",
    "payload",
];

impl TraceEvent {
    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("event_id".into(), Value::String(self.event_id.clone()));
        m.insert("session_id".into(), Value::String(self.session_id.clone()));
        m.insert("learner_id".into(), Value::String(self.learner_id.clone()));
        m.insert("experiment_id".into(), Value::String(self.experiment_id.clone()));
        m.insert("client_timestamp_ms".into(), Value::from(self.client_timestamp_ms));
        m.insert("server_seq".into(), Value::from(self.server_seq));
        m.insert("server_time_ms".into(), Value::from(self.server_time_ms));
        m.insert("action".into(), Value::String(self.action.as_str().to_owned()));
        m.insert("target".into(), Value::String(self.target.clone()));
        m.insert(
            "payload".into(),
            Value::Object(self.payload.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
        );
        Value::Object(m)
    }

    pub fn payload_str(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }
}

/// Deterministic byte encoding: equal events produce identical bytes and
/// the output parses back through [`validate_event`].
pub fn canonical_serialize(event: &TraceEvent) -> Vec<u8> {
    canonical::to_canonical_bytes(&event.to_value())
}

/// Types a wire document into a [`TraceEvent`].
///
/// Unknown top-level fields are folded into `payload`; an explicit payload
/// key of the same name wins. Missing `server_seq`/`server_time_ms` default
/// to 0 and are overwritten at commit.
pub fn validate_event(raw: &Value, vocabulary: &Vocabulary) -> Result<TraceEvent, ValidationError> {
    let obj = raw.as_object().ok_or(ValidationError::NotAnObject)?;

    let event_id = required_id(obj, "event_id")?;
    let session_id = required_id(obj, "session_id")?;
    let learner_id = required_id(obj, "learner_id")?;
    let experiment_id = required_id(obj, "experiment_id")?;

    let client_timestamp_ms = match obj.get("client_timestamp_ms") {
        None => return Err(ValidationError::MissingField("client_timestamp_ms".into())),
        Some(v) => v
            .as_i64()
            .ok_or_else(|| ValidationError::MalformedTimestamp("client_timestamp_ms".into()))?,
    };
    let server_seq = optional_u64(obj, "server_seq", false)?;
    let server_time_ms = optional_u64(obj, "server_time_ms", true)?;

    let action_name = match obj.get("action") {
        None => return Err(ValidationError::MissingField("action".into())),
        Some(Value::String(s)) => s.as_str(),
        Some(_) => {
            return Err(ValidationError::InvalidField {
                field: "action".into(),
                reason: "expected a string".into(),
            })
        }
    };
    let action = vocabulary
        .resolve(action_name)
        .ok_or_else(|| ValidationError::UnknownAction(action_name.to_owned()))?;

    let target = match obj.get("target") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(ValidationError::InvalidField {
                field: "target".into(),
                reason: "expected a string".into(),
            })
        }
    };

    let mut payload: BTreeMap<String, Value> = match obj.get("payload") {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(Value::Object(p)) => p.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        Some(_) => {
            return Err(ValidationError::InvalidField {
                field: "payload".into(),
                reason: "expected an object".into(),
            })
        }
    };
    for (k, v) in obj {
        if !KNOWN_FIELDS.contains(&k.as_str()) {
            payload.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }

    Ok(TraceEvent {
        event_id,
        session_id,
        learner_id,
        experiment_id,
        client_timestamp_ms,
        server_seq,
        server_time_ms,
        action,
        target,
        payload,
    })
}

/// Parses one canonical (or any JSON) line into an event.
pub fn parse_event(bytes: &[u8], vocabulary: &Vocabulary) -> Result<TraceEvent, ValidationError> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| ValidationError::Syntax(e.to_string()))?;
    validate_event(&v, vocabulary)
}

fn required_id(obj: &Map<String, Value>, field: &str) -> Result<String, ValidationError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(ValidationError::MissingField(field.into())),
        Some(Value::String(s)) => {
            check_identifier(field, s)?;
            Ok(s.clone())
        }
        Some(_) => Err(ValidationError::InvalidField {
            field: field.into(),
            reason: "expected a string".into(),
        }),
    }
}

pub(crate) fn check_identifier(field: &str, s: &str) -> Result<(), ValidationError> {
    if s.is_empty() {
        return Err(ValidationError::InvalidField {
            field: field.into(),
            reason: "identifier is empty".into(),
        });
    }
    if s.len() > MAX_ID_BYTES {
        return Err(ValidationError::InvalidField {
            field: field.into(),
            reason: format!("identifier exceeds {MAX_ID_BYTES} bytes"),
        });
    }
    Ok(())
}

fn optional_u64(obj: &Map<String, Value>, field: &str, is_time: bool) -> Result<u64, ValidationError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(0),
        Some(v) => v.as_u64().ok_or_else(|| {
            if is_time {
                ValidationError::MalformedTimestamp(field.into())
            } else {
                ValidationError::InvalidField {
                    field: field.into(),
                    reason: "expected a non-negative integer".into(),
                }
            }
        }),
    }
}
