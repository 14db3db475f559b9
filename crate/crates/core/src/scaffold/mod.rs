//! Timed scaffolds: absence triggers over SRL labels, prompt assembly, and
//! delivery to the instruction panel.

mod config;

pub use config::{
    placeholders, render, ConfigError, Personalization, PromptInputs, PromptTemplate, ScaffoldConfig, TriggerRule,
    SLOTS,
};

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{Gateway, Message, ProviderParams, ProviderRequest};
use crate::analyzer::{AnalyzerHub, SrlLabel};
use crate::ingest::{IngestError, TraceSink};
use crate::model::action::{SCAFFOLD_ACK, SCAFFOLD_SHOWN};
use crate::model::SessionState;
use crate::persist;
use crate::sessions::SessionRegistry;

/// Default evaluation tick.
pub const TICK_MS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeliveryStatus {
    Pending,
    Shown,
    Acknowledged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub inputs: PromptInputs,
    pub model_ref: String,
    pub system_prompt: String,
    #[serde(default)]
    pub raw_reply: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaffoldMessage {
    pub message_id: String,
    pub session_id: String,
    pub rule_id: String,
    pub rendered_prompt: String,
    pub scaffold_text: String,
    /// Task-clock time of issue.
    pub issued_at_ms: u64,
    pub delivery_status: DeliveryStatus,
    /// Set when the text is the template fallback rather than a model reply.
    pub degraded: bool,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScaffoldError {
    #[error("session `{0}` is unknown")]
    SessionUnknown(String),
    #[error("scaffold rule `{0}` is unknown")]
    RuleUnknown(String),
    #[error("template `{0}` is unknown")]
    TemplateUnknown(String),
    #[error("slot `{0}` is unbound")]
    UnboundSlot(String),
    #[error("rule `{rule_id}` was already issued to session `{session_id}`")]
    AlreadyIssued { session_id: String, rule_id: String },
    #[error("scaffold message `{0}` is unknown")]
    MessageUnknown(String),
    #[error("task has not started for session `{0}`")]
    TaskNotStarted(String),
    #[error("could not persist scaffolds: {0}")]
    Persist(String),
    #[error(transparent)]
    Trace(#[from] IngestError),
}

/// Whether the critical process has been evidenced inside the rule's range.
fn evidenced(rule: &TriggerRule, labels: &[(SrlLabel, Vec<String>)], origin_ms: u64) -> bool {
    let (lo, hi) = rule.absence_range();
    labels.iter().any(|(label, actions)| {
        let t = label.start_time_ms as i64 - origin_ms as i64;
        label.process == rule.critical_process
            && t >= lo
            && t < hi as i64
            && (rule.evidence_actions.is_empty() || actions.iter().any(|a| rule.evidence_actions.contains(a)))
    })
}

/// Rules due at task time `now_task_ms`, in rule-file order. Pure.
pub fn due_rules<'a>(
    config: &'a ScaffoldConfig,
    group: &str,
    labels: &[(SrlLabel, Vec<String>)],
    origin_ms: u64,
    issued: &HashSet<String>,
    now_task_ms: u64,
) -> Vec<&'a TriggerRule> {
    config
        .rules
        .iter()
        .filter(|r| r.applicable_groups.contains(group))
        .filter(|r| now_task_ms >= r.due_at())
        .filter(|r| !(r.one_shot && issued.contains(&r.rule_id)))
        .filter(|r| !evidenced(r, labels, origin_ms))
        .collect()
}

/// Re-renders a message's prompt from its stored provenance.
pub fn replay_prompt(message: &ScaffoldMessage) -> Result<String, ScaffoldError> {
    message.provenance.inputs.render_prompt().map_err(ScaffoldError::UnboundSlot)
}

/// Backlog followed by live messages for one session.
pub struct ScaffoldStream {
    backlog: VecDeque<ScaffoldMessage>,
    live: Receiver<ScaffoldMessage>,
}

impl ScaffoldStream {
    pub fn recv_timeout(&mut self, timeout: Duration) -> Option<ScaffoldMessage> {
        if let Some(m) = self.backlog.pop_front() {
            return Some(m);
        }
        match self.live.recv_timeout(timeout) {
            Ok(m) => Some(m),
            Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => None,
        }
    }

    pub fn try_next(&mut self) -> Option<ScaffoldMessage> {
        self.backlog.pop_front().or_else(|| self.live.try_recv().ok())
    }
}

#[derive(Default)]
struct State {
    messages: Vec<ScaffoldMessage>,
    /// (session, rule) reservations and issued one-shot rules.
    issued: HashSet<(String, String)>,
    streams: HashMap<String, Sender<ScaffoldMessage>>,
}

pub struct ScaffoldEngine {
    config: Arc<ScaffoldConfig>,
    analyzer: Arc<AnalyzerHub>,
    sessions: Arc<SessionRegistry>,
    gateway: Arc<Gateway>,
    sink: Arc<dyn TraceSink>,
    state: Mutex<State>,
    path: Option<PathBuf>,
    task_descriptions: RwLock<HashMap<String, String>>,
}

impl ScaffoldEngine {
    /// Loads previously issued messages from `path` when given.
    pub fn open(
        config: Arc<ScaffoldConfig>,
        analyzer: Arc<AnalyzerHub>,
        sessions: Arc<SessionRegistry>,
        gateway: Arc<Gateway>,
        sink: Arc<dyn TraceSink>,
        path: Option<PathBuf>,
    ) -> Result<Self, ScaffoldError> {
        let mut state = State::default();
        if let Some(p) = &path {
            let messages: Vec<ScaffoldMessage> = persist::read_json(p)
                .map_err(|e| ScaffoldError::Persist(e.to_string()))?
                .unwrap_or_default();
            for m in &messages {
                state.issued.insert((m.session_id.clone(), m.rule_id.clone()));
            }
            state.messages = messages;
        }
        Ok(Self {
            config,
            analyzer,
            sessions,
            gateway,
            sink,
            state: Mutex::new(state),
            path,
            task_descriptions: RwLock::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ScaffoldConfig {
        &self.config
    }

    /// Text bound to the `task_description` slot for an experiment's sessions.
    pub fn set_task_description(&self, experiment_id: &str, text: impl Into<String>) {
        self.task_descriptions.write().insert(experiment_id.to_owned(), text.into());
    }

    fn issued_rules(&self, session_id: &str) -> HashSet<String> {
        self.state
            .lock()
            .issued
            .iter()
            .filter(|(s, _)| s == session_id)
            .map(|(_, r)| r.clone())
            .collect()
    }

    /// Rules that should fire for a session at task time `now_task_ms`.
    /// Read-only. Sessions that are closed or have not started the task
    /// have nothing due.
    pub fn evaluate_triggers(&self, session_id: &str, now_task_ms: u64) -> Result<Vec<TriggerRule>, ScaffoldError> {
        let session = self
            .sessions
            .get(session_id)
            .ok_or_else(|| ScaffoldError::SessionUnknown(session_id.to_owned()))?;
        let Some(origin) = self.analyzer.task_origin(session_id) else {
            return Ok(Vec::new());
        };
        if !session.is_active() {
            return Ok(Vec::new());
        }
        let labels = self.analyzer.labels_with_actions(session_id);
        let issued = self.issued_rules(session_id);
        Ok(due_rules(&self.config, session.group(), &labels, origin, &issued, now_task_ms)
            .into_iter()
            .cloned()
            .collect())
    }

    /// Deterministic prompt for `rule` given a condition snapshot.
    pub fn prompt_inputs(
        &self,
        rule: &TriggerRule,
        snapshot: crate::analyzer::ConditionSnapshot,
        group: &str,
        experiment_id: &str,
    ) -> Result<PromptInputs, ScaffoldError> {
        let template = self
            .config
            .template(&rule.template_id)
            .ok_or_else(|| ScaffoldError::TemplateUnknown(rule.template_id.clone()))?
            .clone();
        Ok(PromptInputs {
            rule: rule.clone(),
            template,
            snapshot,
            personalization: self.config.personalization_of(group),
            task_description: self
                .task_descriptions
                .read()
                .get(experiment_id)
                .cloned()
                .unwrap_or_default(),
        })
    }

    /// Issues `rule_id` to a session: renders the prompt, asks the model for
    /// the message text (falling back to the template text on failure),
    /// persists the message and pushes it onto the session's stream.
    pub fn issue_scaffold(
        &self,
        session_id: &str,
        rule_id: &str,
        now_task_ms: u64,
    ) -> Result<ScaffoldMessage, ScaffoldError> {
        let session = self
            .sessions
            .get(session_id)
            .ok_or_else(|| ScaffoldError::SessionUnknown(session_id.to_owned()))?;
        let rule = self
            .config
            .rule(rule_id)
            .ok_or_else(|| ScaffoldError::RuleUnknown(rule_id.to_owned()))?
            .clone();
        let key = (session_id.to_owned(), rule_id.to_owned());
        if rule.one_shot && !self.state.lock().issued.insert(key.clone()) {
            return Err(ScaffoldError::AlreadyIssued {
                session_id: session_id.to_owned(),
                rule_id: rule_id.to_owned(),
            });
        }
        let result = self.build_message(&session, &rule, now_task_ms);
        let mut state = self.state.lock();
        let message = match result {
            Ok(m) => m,
            Err(e) => {
                if rule.one_shot {
                    state.issued.remove(&key);
                }
                return Err(e);
            }
        };
        state.messages.push(message.clone());
        self.persist(&state)?;
        if let Some(tx) = state.streams.get(session_id) {
            if tx.send(message.clone()).is_err() {
                state.streams.remove(session_id);
            }
        }
        tracing::info!(session = session_id, rule = rule_id, degraded = message.degraded, "scaffold issued");
        Ok(message)
    }

    fn build_message(
        &self,
        session: &SessionState,
        rule: &TriggerRule,
        now_task_ms: u64,
    ) -> Result<ScaffoldMessage, ScaffoldError> {
        let snapshot = self.analyzer.conditions(&session.session_id);
        let inputs = self.prompt_inputs(rule, snapshot, session.group(), &session.experiment_id)?;
        let prompt = inputs.render_prompt().map_err(ScaffoldError::UnboundSlot)?;
        let request = ProviderRequest::new(
            self.config.model_ref.clone(),
            self.config.system_prompt.clone(),
            vec![Message::user(prompt.clone())],
            ProviderParams {
                temperature: 0.3,
                max_output_tokens: 200,
            },
        );
        let (text, raw_reply, error) = match self.gateway.complete(&request) {
            Ok(r) if !r.text.trim().is_empty() => (Some(r.text.trim().to_owned()), Some(r.text), None),
            Ok(r) => (None, Some(r.text), Some("empty reply".to_owned())),
            Err(e) => (None, None, Some(e.to_string())),
        };
        let degraded = text.is_none();
        let scaffold_text = match text {
            Some(t) => t,
            None => inputs.render_fallback().map_err(ScaffoldError::UnboundSlot)?,
        };
        Ok(ScaffoldMessage {
            message_id: format!("scf-{}", uuid::Uuid::new_v4().simple()),
            session_id: session.session_id.clone(),
            rule_id: rule.rule_id.clone(),
            rendered_prompt: prompt,
            scaffold_text,
            issued_at_ms: now_task_ms,
            delivery_status: DeliveryStatus::Pending,
            degraded,
            provenance: Provenance {
                inputs,
                model_ref: self.config.model_ref.clone(),
                system_prompt: self.config.system_prompt.clone(),
                raw_reply,
                error,
            },
        })
    }

    fn persist(&self, state: &State) -> Result<(), ScaffoldError> {
        match &self.path {
            Some(p) => persist::write_json(p, &state.messages).map_err(|e| ScaffoldError::Persist(e.to_string())),
            None => Ok(()),
        }
    }

    /// Evaluates and issues for every active session at server time
    /// `now_ms`. Returns the messages issued by this tick.
    pub fn tick(&self, now_ms: u64) -> Vec<ScaffoldMessage> {
        self.tick_where(now_ms, |_| true)
    }

    /// Like [`tick`](Self::tick), restricted to sessions accepted by `filter`.
    pub fn tick_where(&self, now_ms: u64, filter: impl Fn(&SessionState) -> bool) -> Vec<ScaffoldMessage> {
        let mut issued = Vec::new();
        for session in self.sessions.all() {
            if !session.is_active() || !filter(&session) {
                continue;
            }
            let Some(origin) = self.analyzer.task_origin(&session.session_id) else {
                continue;
            };
            let Some(task_ms) = now_ms.checked_sub(origin) else {
                continue;
            };
            let due = match self.evaluate_triggers(&session.session_id, task_ms) {
                Ok(d) => d,
                Err(_) => continue,
            };
            for rule in due {
                match self.issue_scaffold(&session.session_id, &rule.rule_id, task_ms) {
                    Ok(m) => issued.push(m),
                    Err(ScaffoldError::AlreadyIssued { .. }) => {}
                    Err(e) => tracing::warn!(session = %session.session_id, rule = %rule.rule_id, error = %e, "scaffold not issued"),
                }
            }
        }
        issued
    }

    pub fn messages(&self, session_id: &str) -> Vec<ScaffoldMessage> {
        self.state
            .lock()
            .messages
            .iter()
            .filter(|m| m.session_id == session_id)
            .cloned()
            .collect()
    }

    pub fn message(&self, message_id: &str) -> Option<ScaffoldMessage> {
        self.state.lock().messages.iter().find(|m| m.message_id == message_id).cloned()
    }

    /// Opens the session's stream, replacing any previous consumer. The
    /// backlog holds the session's messages issued after `after_message_id`
    /// (all of them when `None`).
    pub fn subscribe(&self, session_id: &str, after_message_id: Option<&str>) -> Result<ScaffoldStream, ScaffoldError> {
        if self.sessions.get(session_id).is_none() {
            return Err(ScaffoldError::SessionUnknown(session_id.to_owned()));
        }
        let mut state = self.state.lock();
        let mine: Vec<&ScaffoldMessage> = state.messages.iter().filter(|m| m.session_id == session_id).collect();
        let start = match after_message_id {
            Some(id) => mine
                .iter()
                .position(|m| m.message_id == id)
                .map(|i| i + 1)
                .ok_or_else(|| ScaffoldError::MessageUnknown(id.to_owned()))?,
            None => 0,
        };
        let backlog = mine[start..].iter().map(|m| (*m).clone()).collect();
        let (tx, rx) = unbounded();
        state.streams.insert(session_id.to_owned(), tx);
        Ok(ScaffoldStream { backlog, live: rx })
    }

    /// Moves a message forward to `status`, logging SCAFFOLD_SHOWN on first
    /// display and SCAFFOLD_ACK on acknowledgement. Moving backwards or
    /// repeating a status changes nothing.
    pub fn acknowledge(&self, message_id: &str, status: DeliveryStatus) -> Result<ScaffoldMessage, ScaffoldError> {
        let (message, events) = {
            let mut state = self.state.lock();
            let m = state
                .messages
                .iter_mut()
                .find(|m| m.message_id == message_id)
                .ok_or_else(|| ScaffoldError::MessageUnknown(message_id.to_owned()))?;
            let mut events = Vec::new();
            if status > m.delivery_status {
                if m.delivery_status == DeliveryStatus::Pending {
                    events.push(SCAFFOLD_SHOWN);
                }
                if status == DeliveryStatus::Acknowledged {
                    events.push(SCAFFOLD_ACK);
                }
                m.delivery_status = status;
            }
            let m = m.clone();
            if !events.is_empty() {
                self.persist(&state)?;
            }
            (m, events)
        };
        for action in events {
            let payload = BTreeMap::from([
                ("message_id".to_owned(), Value::String(message.message_id.clone())),
                ("rule_id".to_owned(), Value::String(message.rule_id.clone())),
            ]);
            self.sink.emit(&message.session_id, action, &message.rule_id, payload)?;
        }
        Ok(message)
    }
}
