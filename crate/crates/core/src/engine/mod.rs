//! One handle over every service, wired the way a deployment runs them.
//!
//! [`Engine::open`] rebuilds in-memory state from the data directory: the
//! analyzer replays the event log, chats and documents are rebuilt from
//! their trace events, and small registries (experiments, plans, resources,
//! grades) are read from JSON files. Learner-facing calls check the tool
//! gate of the session's group before doing anything.

mod config;
mod error;

pub use config::{EngineConfig, ProviderSpec};
pub use error::{EngineError, ErrorKind};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::admin::{self, AdminError, ExperimentConfig, ExperimentStats, Plan, SearchHit};
use crate::agents::{ChatHub, ChatSession, ChatSpec, Gateway, TurnOutcome};
use crate::analyzer::{
    label_stream, score_instrument, AnalyzerConfig, AnalyzerHub, ConditionSnapshot, IntervalAggregate, RuleSet,
    SrlLabel, StatementTable, StaticCondition,
};
use crate::clock::SharedClock;
use crate::collab::{CommittedOp, DocHub, DocOp, DocStream, SubmitResult};
use crate::ingest::{EventStore, IngestAck, IngestError, IngestService, StoreConfig, Subscription, TraceSink};
use crate::model::action::{DOC_OP, INSTRUMENT_SUBMIT, PHASE_CHANGE, SAVE_PLANNER, SUBMIT_TEXT, TIMER};
use crate::model::{parse_event, Phase, SessionState, SessionStatus, TraceEvent, Vocabulary};
use crate::persist;
use crate::scaffold::{DeliveryStatus, ScaffoldConfig, ScaffoldEngine, ScaffoldMessage, ScaffoldStream};
use crate::sessions::SessionRegistry;
use crate::writing::{
    analyze_academic, analyze_basic, analyze_originality, classify_cognition, grade_submission, text_hash,
    AcademicLexicon, AnnotationSet, Grade, Rubric,
};

pub const TOOL_CHAT: &str = "chat";
pub const TOOL_PLANNER: &str = "planner";
pub const TOOL_WRITING: &str = "writing_analytics";
pub const TOOL_DOC: &str = "collab_doc";
pub const TOOL_TIMER: &str = "timer";
pub const TOOL_PANEL: &str = "instruction_panel";

/// Group given to sessions that only exist through an imported export.
pub const IMPORTED_GROUP: &str = "imported";

/// A JSON document mirrored to disk on every change.
struct Persisted<T> {
    value: Mutex<T>,
    path: Option<PathBuf>,
}

impl<T: Serialize + DeserializeOwned + Default> Persisted<T> {
    fn open(dir: Option<&Path>, file: &str) -> Result<Self, EngineError> {
        let path = dir.map(|d| d.join(file));
        let value = match &path {
            Some(p) => persist::read_json(p)?.unwrap_or_default(),
            None => T::default(),
        };
        Ok(Self {
            value: Mutex::new(value),
            path,
        })
    }

    fn read<R>(&self, f: impl FnOnce(&T) -> R) -> R {
        f(&self.value.lock())
    }

    fn update<R>(&self, f: impl FnOnce(&mut T) -> Result<R, EngineError>) -> Result<R, EngineError> {
        let mut guard = self.value.lock();
        let r = f(&mut guard)?;
        if let Some(p) = &self.path {
            persist::write_json(p, &*guard)?;
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub source_id: String,
    pub text: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Resources {
    rubrics: BTreeMap<String, Rubric>,
    source_sets: BTreeMap<String, Vec<Source>>,
    /// Lexicon documents uploaded at runtime, kept in their file format.
    lexicons: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocMeta {
    pub experiment_id: String,
    pub created_by: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub submission_id: String,
    pub session_id: String,
    pub submitted_at_ms: u64,
    pub grade: Grade,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewSession {
    #[serde(default)]
    pub session_id: Option<String>,
    pub learner_id: String,
    pub experiment_id: String,
    pub group: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Basic,
    Academic,
    Originality,
    Cognition,
}

impl AnalysisKind {
    pub const ALL: [AnalysisKind; 4] = [
        AnalysisKind::Basic,
        AnalysisKind::Academic,
        AnalysisKind::Originality,
        AnalysisKind::Cognition,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub session_id: String,
    pub text: String,
    /// All four analyzers when empty.
    #[serde(default)]
    pub kinds: Vec<AnalysisKind>,
    #[serde(default)]
    pub source_set_id: Option<String>,
    #[serde(default)]
    pub lexicon_id: Option<String>,
}

/// Merged annotations plus the analyzers that failed, by kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    #[serde(flatten)]
    pub set: AnnotationSet,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<AnalysisKind, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimerReading {
    pub elapsed_ms: Option<u64>,
    pub remaining_ms: Option<u64>,
    pub duration_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportReport {
    pub imported: u64,
    pub duplicates: u64,
    pub sessions_registered: u64,
    /// (1-based line number, reason) for every rejected line.
    pub rejected: Vec<(usize, String)>,
}

pub struct Engine {
    config: EngineConfig,
    clock: SharedClock,
    store: Arc<EventStore>,
    sessions: Arc<SessionRegistry>,
    ingest: Arc<IngestService>,
    analyzer: Arc<AnalyzerHub>,
    gateway: Arc<Gateway>,
    chats: ChatHub,
    scaffolds: ScaffoldEngine,
    docs: DocHub,
    experiments: Persisted<BTreeMap<String, ExperimentConfig>>,
    plans: Persisted<BTreeMap<String, Plan>>,
    resources: Persisted<Resources>,
    submissions: Persisted<Vec<SubmissionRecord>>,
    chat_specs: Persisted<Vec<ChatSpec>>,
    doc_meta: Persisted<BTreeMap<String, DocMeta>>,
    lexicons: Mutex<HashMap<String, Arc<AcademicLexicon>>>,
    /// Serializes experiment reconfiguration against session creation.
    config_lock: Mutex<()>,
}

fn read_file(path: &Path) -> Result<String, EngineError> {
    std::fs::read_to_string(path).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))
}

impl Engine {
    /// Opens (or creates) the engine state under `config.data_dir`.
    pub fn open(config: EngineConfig, clock: SharedClock) -> Result<Self, EngineError> {
        Self::open_with_gateway(config, clock, Arc::new(Gateway::new()))
    }

    /// Like [`open`](Self::open) with a caller-built gateway; providers named
    /// in the configuration are registered on top of it.
    pub fn open_with_gateway(
        config: EngineConfig,
        clock: SharedClock,
        gateway: Arc<Gateway>,
    ) -> Result<Self, EngineError> {
        config.register_providers(&gateway);
        let dir = config.data_dir.clone();
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }

        let rules = match &config.label_rules {
            Some(p) => RuleSet::from_json(&read_file(p)?).map_err(|e| EngineError::Config(e.to_string()))?,
            None => RuleSet::default_rules(),
        };
        let statements = match &config.statements {
            Some(p) => StatementTable::from_json(&read_file(p)?).map_err(|e| EngineError::Config(e.to_string()))?,
            None => StatementTable::default_table(),
        };
        let scaffold_config = match &config.scaffold_rules {
            Some(p) => ScaffoldConfig::from_json(&read_file(p)?).map_err(|e| EngineError::Config(e.to_string()))?,
            None => ScaffoldConfig::default_rules(),
        };
        let mut lexicons = HashMap::new();
        lexicons.insert("default".to_owned(), Arc::new(AcademicLexicon::default_lexicon()));
        for (id, p) in &config.lexicons {
            let lex = AcademicLexicon::from_json(&read_file(p)?).map_err(|e| EngineError::Config(e.to_string()))?;
            lexicons.insert(id.clone(), Arc::new(lex));
        }

        let store_config = StoreConfig {
            data_dir: dir.as_ref().map(|d| d.join("events")),
            shards: config.shards.max(1),
            ..StoreConfig::default()
        };
        let store = Arc::new(EventStore::open(store_config, Arc::clone(&clock))?);
        let sessions = Arc::new(match &dir {
            Some(d) => SessionRegistry::open(d.join("sessions.json"))?,
            None => SessionRegistry::in_memory(),
        });
        let vocabulary = Arc::new(Vocabulary::with_extra(config.extra_actions.iter().cloned()));
        let ingest = Arc::new(IngestService::new(Arc::clone(&store), Arc::clone(&sessions), vocabulary));
        let sink: Arc<dyn TraceSink> = ingest.clone();

        let analyzer = Arc::new(AnalyzerHub::new(AnalyzerConfig {
            rules: Arc::new(rules),
            statements: Arc::new(statements),
            ..AnalyzerConfig::default()
        }));
        // Replay before attaching so nothing is observed twice.
        let mut doc_ops: BTreeMap<String, Vec<CommittedOp>> = BTreeMap::new();
        let mut session_events: HashMap<String, Vec<TraceEvent>> = HashMap::new();
        for exp in store.experiments() {
            for sid in store.experiment_sessions(&exp) {
                let events = store.read_session(&sid, 0)?;
                for e in &events {
                    analyzer.observe(e);
                    if e.action.is(DOC_OP) {
                        if let Some(c) = CommittedOp::from_payload(&e.payload) {
                            doc_ops.entry(c.op.doc_id.clone()).or_default().push(c);
                        }
                    }
                }
                session_events.insert(sid, events);
            }
        }
        store.add_listener(analyzer.clone());

        let chats = ChatHub::new(Arc::clone(&gateway), Arc::clone(&sink)).with_token_budget(config.chat_context_budget_tokens);
        let chat_specs: Persisted<Vec<ChatSpec>> = Persisted::open(dir.as_deref(), "chats.json")?;
        for spec in chat_specs.read(|v| v.clone()) {
            let events = session_events.get(&spec.session_id).map(Vec::as_slice).unwrap_or_default();
            chats.restore(ChatSession::replay(spec, events)?);
        }

        let docs = DocHub::new(Arc::clone(&clock), Some(Arc::clone(&sink)));
        let doc_meta: Persisted<BTreeMap<String, DocMeta>> = Persisted::open(dir.as_deref(), "docs.json")?;
        for doc_id in doc_meta.read(|m| m.keys().cloned().collect::<Vec<_>>()) {
            docs.restore(&doc_id, doc_ops.remove(&doc_id).unwrap_or_default())?;
        }

        let scaffolds = ScaffoldEngine::open(
            Arc::new(scaffold_config),
            Arc::clone(&analyzer),
            Arc::clone(&sessions),
            Arc::clone(&gateway),
            sink,
            dir.as_ref().map(|d| d.join("scaffolds.json")),
        )?;
        let experiments: Persisted<BTreeMap<String, ExperimentConfig>> =
            Persisted::open(dir.as_deref(), "experiments.json")?;
        experiments.read(|m| {
            for (id, e) in m {
                scaffolds.set_task_description(id, e.task.instruction_doc.clone());
            }
        });
        let resources: Persisted<Resources> = Persisted::open(dir.as_deref(), "resources.json")?;
        resources.read(|r| -> Result<(), EngineError> {
            for (id, doc) in &r.lexicons {
                let lex = AcademicLexicon::from_json(&doc.to_string()).map_err(|e| EngineError::Config(e.to_string()))?;
                lexicons.insert(id.clone(), Arc::new(lex));
            }
            Ok(())
        })?;

        Ok(Self {
            plans: Persisted::open(dir.as_deref(), "plans.json")?,
            submissions: Persisted::open(dir.as_deref(), "submissions.json")?,
            config,
            clock,
            store,
            sessions,
            ingest,
            analyzer,
            gateway,
            chats,
            scaffolds,
            docs,
            experiments,
            resources,
            chat_specs,
            doc_meta,
            lexicons: Mutex::new(lexicons),
            config_lock: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn store(&self) -> &Arc<EventStore> {
        &self.store
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn analyzer(&self) -> &Arc<AnalyzerHub> {
        &self.analyzer
    }

    pub fn scaffolds(&self) -> &ScaffoldEngine {
        &self.scaffolds
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        self.ingest.vocabulary()
    }

    /// Flushes and stops the event store.
    pub fn shutdown(&self) {
        self.store.shutdown();
    }

    // ---- sessions and tool gating ----

    fn session(&self, session_id: &str) -> Result<SessionState, EngineError> {
        self.sessions
            .get(session_id)
            .ok_or_else(|| EngineError::Ingest(IngestError::SessionUnknown(session_id.to_owned())))
    }

    /// Whether `tool` is enabled for the session's group. Experiments
    /// without a configuration leave every tool enabled.
    pub fn tool_allowed(&self, session: &SessionState, tool: &str) -> bool {
        self.experiments.read(|m| {
            m.get(&session.experiment_id)
                .map_or(true, |c| c.tool_enabled(session.group(), tool))
        })
    }

    /// Looks up the session and checks that `tool` is enabled for it.
    pub fn require_tool(&self, session_id: &str, tool: &str) -> Result<SessionState, EngineError> {
        let session = self.session(session_id)?;
        if !self.tool_allowed(&session, tool) {
            return Err(EngineError::tool_disabled(tool, session.group()));
        }
        Ok(session)
    }

    pub fn create_session(&self, req: NewSession) -> Result<SessionState, EngineError> {
        let _guard = self.config_lock.lock();
        if let Some(exp) = self.experiments.read(|m| m.get(&req.experiment_id).cloned()) {
            if !exp.groups.contains(&req.group) {
                return Err(EngineError::Admin(AdminError::Validation(format!(
                    "group `{}` is not part of experiment `{}`",
                    req.group, req.experiment_id
                ))));
            }
        }
        let id = req
            .session_id
            .unwrap_or_else(|| format!("s-{}", uuid::Uuid::new_v4().simple()));
        let session = SessionState::new(id, req.learner_id, req.experiment_id, req.group)?;
        self.sessions.create(session.clone())?;
        Ok(session)
    }

    pub fn get_session(&self, session_id: &str) -> Result<SessionState, EngineError> {
        self.session(session_id)
    }

    pub fn sessions(&self) -> Vec<SessionState> {
        self.sessions.all()
    }

    /// Moves a session forward and logs the transition. Entering the main
    /// task starts the task clock.
    pub fn advance_phase(&self, session_id: &str, phase: Phase) -> Result<IngestAck, EngineError> {
        let now = self.now_ms();
        self.sessions.update(session_id, |s| s.advance(phase, now))??;
        let payload = BTreeMap::from([("phase".to_owned(), serde_json::to_value(phase).expect("phase serializes"))]);
        Ok(self.ingest.emit(session_id, PHASE_CHANGE, "session", payload)?)
    }

    pub fn finish_session(&self, session_id: &str, status: SessionStatus) -> Result<SessionState, EngineError> {
        if status == SessionStatus::Active {
            return Err(EngineError::Invalid("a session cannot be reopened".into()));
        }
        self.sessions.update(session_id, |s| {
            s.finish(status);
            Ok::<_, EngineError>(s.clone())
        })?
    }

    // ---- ingestion and analysis ----

    pub fn ingest(&self, raw: &Value, session_id: &str) -> Result<IngestAck, EngineError> {
        Ok(self.ingest.ingest(raw, session_id)?)
    }

    pub fn ingest_batch(&self, raws: &[Value]) -> Vec<Result<IngestAck, EngineError>> {
        self.ingest
            .ingest_batch(raws)
            .into_iter()
            .map(|r| r.map_err(Into::into))
            .collect()
    }

    pub fn subscribe_events(&self, session_id: &str, from_seq: u64) -> Result<Subscription, EngineError> {
        self.session(session_id)?;
        Ok(self.store.subscribe(session_id, from_seq)?)
    }

    pub fn labels(&self, session_id: &str) -> Result<Vec<SrlLabel>, EngineError> {
        self.session(session_id)?;
        Ok(self.analyzer.labels(session_id))
    }

    pub fn conditions(&self, session_id: &str) -> Result<ConditionSnapshot, EngineError> {
        self.session(session_id)?;
        Ok(self.analyzer.conditions(session_id))
    }

    pub fn intervals(&self, session_id: &str, k: u64) -> Result<IntervalAggregate, EngineError> {
        self.session(session_id)?;
        self.analyzer
            .aggregate(session_id, k, self.now_ms())
            .map_err(|e| EngineError::Invalid(e.to_string()))
    }

    /// Scores a multiple-choice instrument and logs the score, which feeds
    /// the matching static condition.
    pub fn submit_instrument(
        &self,
        session_id: &str,
        instrument: &str,
        responses: &[Option<u32>],
        key: &[u32],
    ) -> Result<f64, EngineError> {
        if StaticCondition::from_key(instrument).is_none() {
            return Err(EngineError::Invalid(format!("unknown instrument `{instrument}`")));
        }
        let score = score_instrument(responses, key).map_err(|e| EngineError::Invalid(format!("{e:?}")))?;
        let payload = BTreeMap::from([
            ("instrument".to_owned(), Value::String(instrument.to_owned())),
            ("score".to_owned(), Value::from(score)),
        ]);
        self.ingest.emit(session_id, INSTRUMENT_SUBMIT, instrument, payload)?;
        Ok(score)
    }

    /// Reads the task timer and logs the click.
    pub fn timer(&self, session_id: &str) -> Result<TimerReading, EngineError> {
        let session = self.require_tool(session_id, TOOL_TIMER)?;
        let duration = self
            .experiments
            .read(|m| m.get(&session.experiment_id).map(|e| e.task.duration_ms));
        let elapsed = self
            .analyzer
            .task_origin(session_id)
            .map(|o| self.now_ms().saturating_sub(o));
        let reading = TimerReading {
            elapsed_ms: elapsed,
            remaining_ms: duration.zip(elapsed).map(|(d, e)| d.saturating_sub(e)),
            duration_ms: duration,
        };
        let mut payload = BTreeMap::new();
        if let Some(r) = reading.remaining_ms {
            payload.insert("remaining_ms".to_owned(), Value::from(r));
        }
        self.ingest.emit(session_id, TIMER, "timer", payload)?;
        Ok(reading)
    }

    // ---- chat ----

    pub fn create_chat(&self, spec: ChatSpec) -> Result<ChatSession, EngineError> {
        let session = self.require_tool(&spec.session_id, TOOL_CHAT)?;
        if !session.is_active() {
            return Err(IngestError::SessionClosed(session.session_id).into());
        }
        self.chat_specs.update(|specs| {
            let chat = self.chats.configure_chat(spec)?;
            specs.push(chat.spec.clone());
            Ok(chat)
        })
    }

    fn chat_session(&self, chat_id: &str, tool_check: bool) -> Result<ChatSession, EngineError> {
        let chat = self
            .chats
            .get(chat_id)
            .ok_or_else(|| crate::agents::ChatError::ChatUnknown(chat_id.to_owned()))?;
        if tool_check {
            self.require_tool(&chat.spec.session_id, TOOL_CHAT)?;
        }
        Ok(chat)
    }

    pub fn send_turn(&self, chat_id: &str, text: &str, addressee: &str) -> Result<TurnOutcome, EngineError> {
        self.chat_session(chat_id, true)?;
        Ok(self.chats.send_turn(chat_id, text, addressee)?)
    }

    /// The chat as the learner sees it.
    pub fn chat(&self, chat_id: &str) -> Result<ChatSession, EngineError> {
        self.chat_session(chat_id, true)
    }

    // ---- scaffolds ----

    /// Runs one trigger evaluation over sessions whose group has the
    /// instruction panel.
    pub fn tick(&self) -> Vec<ScaffoldMessage> {
        self.scaffolds
            .tick_where(self.now_ms(), |s| self.tool_allowed(s, TOOL_PANEL))
    }

    pub fn subscribe_scaffolds(
        &self,
        session_id: &str,
        after_message_id: Option<&str>,
    ) -> Result<ScaffoldStream, EngineError> {
        self.require_tool(session_id, TOOL_PANEL)?;
        Ok(self.scaffolds.subscribe(session_id, after_message_id)?)
    }

    pub fn scaffold_messages(&self, session_id: &str) -> Result<Vec<ScaffoldMessage>, EngineError> {
        self.require_tool(session_id, TOOL_PANEL)?;
        Ok(self.scaffolds.messages(session_id))
    }

    pub fn ack_scaffold(&self, message_id: &str, status: DeliveryStatus) -> Result<ScaffoldMessage, EngineError> {
        let m = self
            .scaffolds
            .message(message_id)
            .ok_or_else(|| crate::scaffold::ScaffoldError::MessageUnknown(message_id.to_owned()))?;
        self.require_tool(&m.session_id, TOOL_PANEL)?;
        Ok(self.scaffolds.acknowledge(message_id, status)?)
    }

    /// Ticks every `config.tick_ms` of wall time until the handle is dropped.
    pub fn start_ticker(self: &Arc<Self>) -> Ticker {
        let stop = Arc::new(AtomicBool::new(false));
        let engine = Arc::downgrade(self);
        let period = Duration::from_millis(self.config.tick_ms.max(1));
        let flag = Arc::clone(&stop);
        let handle = std::thread::Builder::new()
            .name("scaffold-ticker".into())
            .spawn(move || {
                let step = period.min(Duration::from_millis(50));
                let mut waited = Duration::ZERO;
                while !flag.load(Ordering::Relaxed) {
                    std::thread::sleep(step);
                    waited += step;
                    if waited < period {
                        continue;
                    }
                    waited = Duration::ZERO;
                    match engine.upgrade() {
                        Some(e) => {
                            e.tick();
                        }
                        None => break,
                    }
                }
            })
            .expect("spawn ticker");
        Ticker {
            stop,
            handle: Some(handle),
        }
    }

    // ---- writing ----

    fn lexicon(&self, id: Option<&str>) -> Result<Arc<AcademicLexicon>, EngineError> {
        let id = id.unwrap_or("default");
        self.lexicons
            .lock()
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::ResourceUnknown {
                kind: "lexicon",
                id: id.to_owned(),
            })
    }

    fn source_set(&self, id: &str) -> Result<Vec<(String, String)>, EngineError> {
        self.resources.read(|r| {
            r.source_sets
                .get(id)
                .map(|s| s.iter().map(|s| (s.source_id.clone(), s.text.clone())).collect())
                .ok_or_else(|| EngineError::ResourceUnknown {
                    kind: "source set",
                    id: id.to_owned(),
                })
        })
    }

    /// Runs the requested analyzers in parallel and merges their
    /// annotations. A failing analyzer is reported under `errors` and does
    /// not hide the others' results.
    pub fn analyze(&self, req: &AnalyzeRequest) -> Result<AnalyzeReport, EngineError> {
        let session = self.require_tool(&req.session_id, TOOL_WRITING)?;
        let kinds: BTreeSet<AnalysisKind> = if req.kinds.is_empty() {
            AnalysisKind::ALL.into_iter().collect()
        } else {
            req.kinds.iter().copied().collect()
        };
        let lexicon = kinds
            .contains(&AnalysisKind::Academic)
            .then(|| self.lexicon(req.lexicon_id.as_deref()))
            .transpose()?;
        let source_set_id = req.source_set_id.clone().or_else(|| {
            self.experiments
                .read(|m| m.get(&session.experiment_id).and_then(|e| e.task.source_set_id.clone()))
        });
        let sources = match (&source_set_id, kinds.contains(&AnalysisKind::Originality)) {
            (Some(id), true) => self.source_set(id)?,
            _ => Vec::new(),
        };
        let text = req.text.as_str();
        let model = self.config.writing_model.as_str();
        let results: Vec<(AnalysisKind, Result<AnnotationSet, String>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = kinds
                .iter()
                .map(|&kind| {
                    let lexicon = lexicon.clone();
                    let sources = &sources;
                    let gateway = &self.gateway;
                    scope.spawn(move || {
                        let r = match kind {
                            AnalysisKind::Basic => analyze_basic(text, gateway, model).map_err(|e| e.to_string()),
                            AnalysisKind::Cognition => {
                                classify_cognition(text, gateway, model).map_err(|e| e.to_string())
                            }
                            AnalysisKind::Academic => Ok(analyze_academic(text, &lexicon.expect("loaded above"))),
                            AnalysisKind::Originality => Ok(analyze_originality(text, sources)),
                        };
                        (kind, r)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("analyzer panicked")).collect()
        });
        let mut sets = Vec::new();
        let mut errors = BTreeMap::new();
        for (kind, r) in results {
            match r {
                Ok(s) => sets.push(s),
                Err(e) => {
                    errors.insert(kind, e);
                }
            }
        }
        Ok(AnalyzeReport {
            set: AnnotationSet::merge(sets, text),
            errors,
        })
    }

    /// Grades a submission against a rubric (the experiment's rubric when
    /// `rubric_id` is `None`), stores the grade and logs SUBMIT_TEXT.
    pub fn submit(&self, session_id: &str, text: &str, rubric_id: Option<&str>) -> Result<SubmissionRecord, EngineError> {
        let session = self.require_tool(session_id, TOOL_WRITING)?;
        let rubric_id = match rubric_id {
            Some(r) => r.to_owned(),
            None => self
                .experiments
                .read(|m| m.get(&session.experiment_id).and_then(|e| e.task.rubric_id.clone()))
                .ok_or_else(|| EngineError::Invalid("no rubric_id given and the experiment has none".into()))?,
        };
        let rubric = self.rubric(&rubric_id)?;
        let grade = grade_submission(text, &rubric, &self.gateway, &self.config.writing_model)?;
        let record = SubmissionRecord {
            submission_id: format!("sub-{}", uuid::Uuid::new_v4().simple()),
            session_id: session_id.to_owned(),
            submitted_at_ms: self.now_ms(),
            grade,
        };
        self.submissions.update(|v| {
            v.push(record.clone());
            Ok(())
        })?;
        let payload = BTreeMap::from([
            ("submission_id".to_owned(), Value::String(record.submission_id.clone())),
            ("rubric_id".to_owned(), Value::String(rubric_id)),
            ("text_hash".to_owned(), Value::String(text_hash(text))),
            ("total_points".to_owned(), Value::from(record.grade.total_points)),
        ]);
        self.ingest.emit(session_id, SUBMIT_TEXT, "essay", payload)?;
        Ok(record)
    }

    pub fn submissions(&self, session_id: &str) -> Vec<SubmissionRecord> {
        self.submissions
            .read(|v| v.iter().filter(|s| s.session_id == session_id).cloned().collect())
    }

    // ---- collaborative documents ----

    pub fn create_doc(&self, doc_id: &str, session_id: &str) -> Result<(), EngineError> {
        let session = self.require_tool(session_id, TOOL_DOC)?;
        self.doc_meta.update(|m| {
            self.docs.create_doc(doc_id)?;
            m.insert(
                doc_id.to_owned(),
                DocMeta {
                    experiment_id: session.experiment_id.clone(),
                    created_by: session.session_id.clone(),
                },
            );
            Ok(())
        })
    }

    fn doc_access(&self, doc_id: &str, session_id: &str) -> Result<SessionState, EngineError> {
        let session = self.require_tool(session_id, TOOL_DOC)?;
        let meta = self
            .doc_meta
            .read(|m| m.get(doc_id).cloned())
            .ok_or_else(|| crate::collab::CollabError::DocUnknown(doc_id.to_owned()))?;
        if meta.experiment_id != session.experiment_id {
            return Err(EngineError::Invalid(format!(
                "document `{doc_id}` belongs to another experiment"
            )));
        }
        Ok(session)
    }

    /// Submits an op on behalf of a session. The op's author must be the
    /// session's learner.
    pub fn submit_op(&self, session_id: &str, op: DocOp) -> Result<SubmitResult, EngineError> {
        let session = self.doc_access(&op.doc_id, session_id)?;
        if op.author != session.learner_id {
            return Err(EngineError::Invalid(format!(
                "op author `{}` is not the session's learner",
                op.author
            )));
        }
        Ok(self.docs.submit_op(op, Some(session_id))?)
    }

    pub fn doc_content(&self, doc_id: &str, session_id: &str) -> Result<(u64, String), EngineError> {
        self.doc_access(doc_id, session_id)?;
        Ok(self.docs.content(doc_id)?)
    }

    pub fn replay_doc(&self, doc_id: &str, session_id: &str, revision: u64) -> Result<String, EngineError> {
        self.doc_access(doc_id, session_id)?;
        Ok(self.docs.replay(doc_id, revision)?)
    }

    pub fn subscribe_doc(&self, doc_id: &str, session_id: &str, from_revision: u64) -> Result<DocStream, EngineError> {
        self.doc_access(doc_id, session_id)?;
        Ok(self.docs.subscribe_doc(doc_id, from_revision)?)
    }

    pub fn docs(&self) -> &DocHub {
        &self.docs
    }

    // ---- planner ----

    /// Stores the session's plan (last write wins) and logs SAVE_PLANNER.
    pub fn save_plan(&self, plan: Plan) -> Result<IngestAck, EngineError> {
        let session = self.require_tool(&plan.session_id, TOOL_PLANNER)?;
        if !session.is_active() {
            return Err(IngestError::SessionClosed(session.session_id).into());
        }
        plan.validate()?;
        let payload = BTreeMap::from([
            ("main_strategy".to_owned(), Value::String(plan.main_strategy.clone())),
            ("allocations".to_owned(), serde_json::to_value(&plan.allocations).expect("plan serializes")),
        ]);
        self.plans.update(|m| {
            m.insert(plan.session_id.clone(), plan.clone());
            Ok(())
        })?;
        Ok(self.ingest.emit(&plan.session_id, SAVE_PLANNER, "planner", payload)?)
    }

    pub fn plan(&self, session_id: &str) -> Option<Plan> {
        self.plans.read(|m| m.get(session_id).cloned())
    }

    // ---- experiments and statistics ----

    /// Stores an experiment configuration. Rejected once the experiment has
    /// sessions.
    pub fn configure_experiment(&self, config: ExperimentConfig) -> Result<(), EngineError> {
        config.validate()?;
        let _guard = self.config_lock.lock();
        if !self.sessions.for_experiment(&config.experiment_id).is_empty() {
            return Err(AdminError::ExperimentStarted(config.experiment_id).into());
        }
        self.scaffolds
            .set_task_description(&config.experiment_id, config.task.instruction_doc.clone());
        self.experiments.update(|m| {
            m.insert(config.experiment_id.clone(), config);
            Ok(())
        })
    }

    pub fn experiment(&self, experiment_id: &str) -> Result<ExperimentConfig, EngineError> {
        self.experiments
            .read(|m| m.get(experiment_id).cloned())
            .ok_or_else(|| AdminError::ExperimentUnknown(experiment_id.to_owned()).into())
    }

    pub fn experiments(&self) -> Vec<ExperimentConfig> {
        self.experiments.read(|m| m.values().cloned().collect())
    }

    pub fn search(&self, query: &str) -> Vec<SearchHit> {
        self.experiments.read(|m| admin::search_experiments(m.values(), query))
    }

    fn experiment_events(&self, experiment_id: &str) -> Result<Vec<TraceEvent>, EngineError> {
        let mut out = Vec::new();
        for sid in self.store.experiment_sessions(experiment_id) {
            out.extend(self.store.read_session(&sid, 0)?);
        }
        Ok(out)
    }

    /// Recomputed from the event store on every call.
    pub fn stats(&self, experiment_id: &str) -> Result<ExperimentStats, EngineError> {
        let known = self.experiments.read(|m| m.contains_key(experiment_id))
            || !self.store.experiment_sessions(experiment_id).is_empty()
            || !self.sessions.for_experiment(experiment_id).is_empty();
        if !known {
            return Err(AdminError::ExperimentUnknown(experiment_id.to_owned()).into());
        }
        let events = self.experiment_events(experiment_id)?;
        Ok(admin::compute_stats(experiment_id, &events))
    }

    /// Share of accounted time per action over the whole session.
    pub fn proportions(&self, session_id: &str) -> Result<BTreeMap<String, f64>, EngineError> {
        if self.sessions.get(session_id).is_none() {
            return Err(AdminError::SessionUnknown(session_id.to_owned()).into());
        }
        let events = self.store.read_session(session_id, 0)?;
        if events.is_empty() {
            return Err(AdminError::NoEvents(session_id.to_owned()).into());
        }
        let mut counts = BTreeMap::new();
        for e in &events {
            *counts.entry(e.action.as_str().to_owned()).or_insert(0u64) += 1;
        }
        Ok(admin::time_proportions(&self.analyzer.action_time_totals(session_id), &counts))
    }

    // ---- export and import ----

    /// Newline-delimited canonical events of an experiment, optionally
    /// restricted to some sessions.
    pub fn export(&self, experiment_id: &str, sessions: Option<&BTreeSet<String>>) -> Result<Vec<u8>, EngineError> {
        Ok(self.store.export(experiment_id, sessions)?)
    }

    /// Re-commits an export with its original sequence numbers and times.
    /// Sessions missing from the registry are registered as completed
    /// sessions of the `imported` group.
    pub fn import(&self, bytes: &[u8]) -> Result<ImportReport, EngineError> {
        let mut report = ImportReport::default();
        let mut events = Vec::new();
        for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            match parse_event(line, self.vocabulary()) {
                Ok(e) => events.push(e),
                Err(e) => report.rejected.push((i + 1, e.to_string())),
            }
        }
        let mut seen = BTreeSet::new();
        for e in &events {
            if seen.insert(e.session_id.clone()) && self.sessions.get(&e.session_id).is_none() {
                let mut s = SessionState::new(&e.session_id, &e.learner_id, &e.experiment_id, IMPORTED_GROUP)?;
                s.finish(SessionStatus::Completed);
                self.sessions.create(s)?;
                report.sessions_registered += 1;
            }
        }
        for r in self.store.import(events) {
            match r {
                Ok(ack) if ack.status == crate::ingest::AckStatus::Duplicate => report.duplicates += 1,
                Ok(_) => report.imported += 1,
                Err(e) => report.rejected.push((0, e.to_string())),
            }
        }
        Ok(report)
    }

    // ---- resources ----

    pub fn put_rubric(&self, rubric: Rubric) -> Result<(), EngineError> {
        rubric.validate()?;
        self.resources.update(|r| {
            r.rubrics.insert(rubric.rubric_id.clone(), rubric);
            Ok(())
        })
    }

    pub fn rubric(&self, rubric_id: &str) -> Result<Rubric, EngineError> {
        self.resources
            .read(|r| r.rubrics.get(rubric_id).cloned())
            .ok_or_else(|| EngineError::ResourceUnknown {
                kind: "rubric",
                id: rubric_id.to_owned(),
            })
    }

    pub fn put_source_set(&self, source_set_id: &str, sources: Vec<Source>) -> Result<(), EngineError> {
        if source_set_id.is_empty() {
            return Err(EngineError::Invalid("empty source set id".into()));
        }
        self.resources.update(|r| {
            r.source_sets.insert(source_set_id.to_owned(), sources);
            Ok(())
        })
    }

    pub fn source_set_ids(&self) -> Vec<String> {
        self.resources.read(|r| r.source_sets.keys().cloned().collect())
    }

    /// Registers a lexicon given in the lexicon file format.
    pub fn put_lexicon(&self, lexicon_id: &str, document: Value) -> Result<(), EngineError> {
        if lexicon_id.is_empty() {
            return Err(EngineError::Invalid("empty lexicon id".into()));
        }
        let lex = AcademicLexicon::from_json(&document.to_string()).map_err(|e| EngineError::Invalid(e.to_string()))?;
        self.resources.update(|r| {
            r.lexicons.insert(lexicon_id.to_owned(), document);
            Ok(())
        })?;
        self.lexicons.lock().insert(lexicon_id.to_owned(), Arc::new(lex));
        Ok(())
    }

    pub fn lexicon_ids(&self) -> Vec<String> {
        let mut v: Vec<String> = self.lexicons.lock().keys().cloned().collect();
        v.sort();
        v
    }
}

/// Stops the background ticker when dropped.
pub struct Ticker {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Drop for Ticker {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Re-runs the labeler over one session of an export. Lines of other
/// sessions are skipped; unparseable lines are errors.
pub fn replay_session_labels(
    export: &[u8],
    session_id: &str,
    rules: &Arc<RuleSet>,
    vocabulary: &Vocabulary,
) -> Result<Vec<SrlLabel>, String> {
    let mut events = Vec::new();
    for (i, line) in export.split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let e = parse_event(line, vocabulary).map_err(|e| format!("line {}: {e}", i + 1))?;
        if e.session_id == session_id {
            events.push(e);
        }
    }
    events.sort_by_key(|e| e.server_seq);
    Ok(label_stream(rules, session_id, &events))
}
