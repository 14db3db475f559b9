//! Multi-agent chat sessions over the gateway.
//!
//! Turns are logged as CHAT_SEND / CHAT_RECEIVE trace events; transcripts are
//! a projection of those events and can be rebuilt with [`ChatSession::replay`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::provider::{Gateway, Message, ProviderParams, ProviderRequest};
use super::scripted::estimate_tokens_from_chars;
use crate::ingest::{IngestError, TraceSink};
use crate::model::action::{CHAT_RECEIVE, CHAT_SEND};
use crate::model::TraceEvent;

/// Author id reserved for the learner.
pub const LEARNER: &str = "learner";
const SHARED_KEY: &str = "shared";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub agent_id: String,
    pub display_name: String,
    #[serde(default)]
    pub avatar_ref: String,
    pub pre_prompt: String,
    pub model_ref: String,
    #[serde(default)]
    pub params: ProviderParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatMode {
    Shared,
    Separate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_id: u64,
    pub author: String,
    /// Agent a learner turn was addressed to; `None` on agent turns.
    #[serde(default)]
    pub addressee: Option<String>,
    pub text: String,
    pub at_seq: u64,
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSpec {
    pub chat_id: String,
    pub session_id: String,
    pub mode: ChatMode,
    pub agents: Vec<AgentConfig>,
    /// Collaborative document this chat is embedded in, if any.
    #[serde(default)]
    pub doc_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChatError {
    #[error("chat `{0}` is unknown")]
    ChatUnknown(String),
    #[error("chat `{0}` already exists")]
    ChatExists(String),
    #[error("agent `{0}` is not part of this chat")]
    AgentUnknown(String),
    #[error("agent id `{0}` appears more than once")]
    DuplicateAgentId(String),
    #[error("a chat needs at least one agent")]
    EmptyAgentList,
    #[error("invalid agent `{agent_id}`: {reason}")]
    InvalidAgent { agent_id: String, reason: String },
    #[error("could not record turn: {0}")]
    Trace(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    #[serde(flatten)]
    pub spec: ChatSpec,
    /// Keyed by `"shared"` in shared mode, by agent id in separate mode.
    pub transcripts: BTreeMap<String, Vec<Turn>>,
    next_turn: u64,
}

impl ChatSession {
    pub fn new(spec: ChatSpec) -> Result<Self, ChatError> {
        if spec.agents.is_empty() {
            return Err(ChatError::EmptyAgentList);
        }
        let mut seen = HashSet::new();
        for a in &spec.agents {
            if !seen.insert(a.agent_id.as_str()) {
                return Err(ChatError::DuplicateAgentId(a.agent_id.clone()));
            }
            let invalid = |reason: &str| ChatError::InvalidAgent {
                agent_id: a.agent_id.clone(),
                reason: reason.into(),
            };
            if a.agent_id.is_empty() || a.agent_id == LEARNER {
                return Err(invalid("agent id must be non-empty and not reserved"));
            }
            if a.pre_prompt.trim().is_empty() {
                return Err(invalid("pre_prompt must be non-empty"));
            }
        }
        let transcripts = match spec.mode {
            ChatMode::Shared => BTreeMap::from([(SHARED_KEY.to_owned(), Vec::new())]),
            ChatMode::Separate => spec.agents.iter().map(|a| (a.agent_id.clone(), Vec::new())).collect(),
        };
        Ok(Self {
            spec,
            transcripts,
            next_turn: 1,
        })
    }

    /// Rebuilds transcripts from logged chat events.
    pub fn replay<'a>(spec: ChatSpec, events: impl IntoIterator<Item = &'a TraceEvent>) -> Result<Self, ChatError> {
        let mut chat = Self::new(spec)?;
        for e in events {
            if !(e.action.is(CHAT_SEND) || e.action.is(CHAT_RECEIVE))
                || e.payload_str("chat_id") != Some(chat.spec.chat_id.as_str())
            {
                continue;
            }
            let Some(turn) = turn_from_event(e) else { continue };
            chat.next_turn = chat.next_turn.max(turn.turn_id + 1);
            let key = if turn.author == LEARNER {
                turn.addressee.clone().unwrap_or_default()
            } else {
                turn.author.clone()
            };
            chat.push(&key, turn);
        }
        Ok(chat)
    }

    pub fn agent(&self, agent_id: &str) -> Option<&AgentConfig> {
        self.spec.agents.iter().find(|a| a.agent_id == agent_id)
    }

    fn key_for(&self, agent_id: &str) -> String {
        match self.spec.mode {
            ChatMode::Shared => SHARED_KEY.to_owned(),
            ChatMode::Separate => agent_id.to_owned(),
        }
    }

    fn push(&mut self, agent_id: &str, turn: Turn) {
        let key = self.key_for(agent_id);
        if let Some(t) = self.transcripts.get_mut(&key) {
            t.push(turn);
        }
    }

    /// The transcript an agent sees.
    pub fn transcript_for(&self, agent_id: &str) -> &[Turn] {
        self.transcripts.get(&self.key_for(agent_id)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Provider context for `agent_id`: its pre-prompt, then the visible
    /// turns in commit order. Failed replies are left out. With a budget, the
    /// oldest turns are dropped until the estimate fits; the newest turn is
    /// always kept.
    pub fn context_for(&self, agent_id: &str, budget_tokens: Option<usize>) -> Result<Vec<Message>, ChatError> {
        let agent = self
            .agent(agent_id)
            .ok_or_else(|| ChatError::AgentUnknown(agent_id.to_owned()))?;
        let names: HashMap<&str, &str> = self
            .spec
            .agents
            .iter()
            .map(|a| (a.agent_id.as_str(), a.display_name.as_str()))
            .collect();
        let mut turns: Vec<Message> = self
            .transcript_for(agent_id)
            .iter()
            .filter(|t| !t.failed)
            .map(|t| {
                if t.author == LEARNER {
                    match t.addressee.as_deref() {
                        Some(a) if a != agent_id => {
                            Message::user(format!("(to {}) {}", names.get(a).unwrap_or(&a), t.text))
                        }
                        _ => Message::user(t.text.clone()),
                    }
                } else if t.author == agent_id {
                    Message::assistant(t.text.clone())
                } else {
                    let name = names.get(t.author.as_str()).copied().unwrap_or(t.author.as_str());
                    Message::assistant(format!("{name}: {}", t.text))
                }
            })
            .collect();
        if let Some(budget) = budget_tokens {
            let cost = |m: &Message| estimate_tokens_from_chars(m.text.chars().count()) as usize;
            let mut total: usize = cost(&Message::system(agent.pre_prompt.clone())) + turns.iter().map(cost).sum::<usize>();
            let mut drop = 0;
            while total > budget && drop + 1 < turns.len() {
                total -= cost(&turns[drop]);
                drop += 1;
            }
            turns.drain(..drop);
        }
        let mut out = Vec::with_capacity(turns.len() + 1);
        out.push(Message::system(agent.pre_prompt.clone()));
        out.extend(turns);
        Ok(out)
    }
}

fn turn_from_event(e: &TraceEvent) -> Option<Turn> {
    let p = &e.payload;
    Some(Turn {
        turn_id: p.get("turn_id")?.as_u64()?,
        author: p.get("author")?.as_str()?.to_owned(),
        addressee: p.get("addressee").and_then(Value::as_str).map(str::to_owned),
        text: p.get("text")?.as_str()?.to_owned(),
        at_seq: e.server_seq,
        failed: p.get("failed").and_then(Value::as_bool).unwrap_or(false),
    })
}

/// Result of one learner turn.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnOutcome {
    pub learner_turn: Turn,
    pub reply_turn: Turn,
    /// Exactly what was sent to the provider.
    pub context: Vec<Message>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct ChatHub {
    gateway: Arc<Gateway>,
    sink: Arc<dyn TraceSink>,
    chats: RwLock<HashMap<String, Arc<Mutex<ChatSession>>>>,
    budget_tokens: Option<usize>,
}

impl ChatHub {
    pub fn new(gateway: Arc<Gateway>, sink: Arc<dyn TraceSink>) -> Self {
        Self {
            gateway,
            sink,
            chats: RwLock::new(HashMap::new()),
            budget_tokens: None,
        }
    }

    pub fn with_token_budget(mut self, budget: Option<usize>) -> Self {
        self.budget_tokens = budget;
        self
    }

    /// Creates a chat. An empty `chat_id` is replaced by a generated one.
    pub fn configure_chat(&self, mut spec: ChatSpec) -> Result<ChatSession, ChatError> {
        if spec.chat_id.is_empty() {
            spec.chat_id = format!("chat-{}", uuid::Uuid::new_v4().simple());
        }
        let chat = ChatSession::new(spec)?;
        let mut chats = self.chats.write();
        if chats.contains_key(&chat.spec.chat_id) {
            return Err(ChatError::ChatExists(chat.spec.chat_id.clone()));
        }
        chats.insert(chat.spec.chat_id.clone(), Arc::new(Mutex::new(chat.clone())));
        Ok(chat)
    }

    /// Registers a chat rebuilt by [`ChatSession::replay`].
    pub fn restore(&self, chat: ChatSession) {
        self.chats
            .write()
            .insert(chat.spec.chat_id.clone(), Arc::new(Mutex::new(chat)));
    }

    pub fn get(&self, chat_id: &str) -> Option<ChatSession> {
        self.chats.read().get(chat_id).map(|c| c.lock().clone())
    }

    pub fn specs(&self) -> Vec<ChatSpec> {
        let mut v: Vec<ChatSpec> = self.chats.read().values().map(|c| c.lock().spec.clone()).collect();
        v.sort_by(|a, b| a.chat_id.cmp(&b.chat_id));
        v
    }

    /// Sends a learner message to `addressee` and records the reply. Provider
    /// failures produce a failed reply turn rather than an error.
    pub fn send_turn(&self, chat_id: &str, text: &str, addressee: &str) -> Result<TurnOutcome, ChatError> {
        let chat = self
            .chats
            .read()
            .get(chat_id)
            .cloned()
            .ok_or_else(|| ChatError::ChatUnknown(chat_id.to_owned()))?;
        let mut chat = chat.lock();
        let agent = chat
            .agent(addressee)
            .cloned()
            .ok_or_else(|| ChatError::AgentUnknown(addressee.to_owned()))?;
        let session_id = chat.spec.session_id.clone();

        let learner_id = chat.next_turn;
        let send = payload(json!({
            "chat_id": chat_id,
            "turn_id": learner_id,
            "author": LEARNER,
            "addressee": addressee,
            "text": text,
        }));
        let ack = self.sink.emit(&session_id, CHAT_SEND, chat_id, send)?;
        let learner_turn = Turn {
            turn_id: learner_id,
            author: LEARNER.into(),
            addressee: Some(addressee.to_owned()),
            text: text.to_owned(),
            at_seq: ack.server_seq,
            failed: false,
        };
        chat.next_turn += 1;
        chat.push(addressee, learner_turn.clone());

        let context = chat.context_for(addressee, self.budget_tokens)?;
        let request = ProviderRequest {
            model_ref: agent.model_ref.clone(),
            messages: context.clone(),
            params: agent.params,
        };
        let (reply_text, error) = match self.gateway.complete(&request) {
            Ok(r) => (r.text, None),
            Err(e) => (String::new(), Some(e.to_string())),
        };
        let reply_id = chat.next_turn;
        let mut body = json!({
            "chat_id": chat_id,
            "turn_id": reply_id,
            "author": agent.agent_id,
            "text": reply_text,
            "failed": error.is_some(),
        });
        if let Some(err) = &error {
            body["error"] = Value::String(err.clone());
        }
        let ack = self.sink.emit(&session_id, CHAT_RECEIVE, chat_id, payload(body))?;
        let reply_turn = Turn {
            turn_id: reply_id,
            author: agent.agent_id.clone(),
            addressee: None,
            text: reply_text,
            at_seq: ack.server_seq,
            failed: error.is_some(),
        };
        chat.next_turn += 1;
        chat.push(addressee, reply_turn.clone());
        Ok(TurnOutcome {
            learner_turn,
            reply_turn,
            context,
            error,
        })
    }
}

fn payload(v: Value) -> BTreeMap<String, Value> {
    match v {
        Value::Object(m) => m.into_iter().collect(),
        _ => BTreeMap::new(),
    }
}
