#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use regulearn::agents::{Gateway, ProviderLimits, ScriptedProvider};
use regulearn::clock::{Clock, ManualClock};
use regulearn::engine::{Engine, EngineConfig, NewSession};
use regulearn::ingest::IngestAck;
use regulearn::model::{ActionType, SessionState, TraceEvent};
use serde_json::{json, Value};

pub mod admin_checks;
pub mod chat_oracle;
pub mod collab_sim;
pub mod conditions;
pub mod intervals;
pub mod originality;
pub mod scaffolds;

pub const T0: u64 = 1_700_000_000_000;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub fn next_event_id() -> String {
    format!("ev-{}", NEXT_ID.fetch_add(1, Ordering::Relaxed))
}

pub fn raw_event(session: &SessionState, action: &str, target: &str) -> Value {
    json!({
        "event_id": next_event_id(),
        "session_id": session.session_id,
        "learner_id": session.learner_id,
        "experiment_id": session.experiment_id,
        "client_timestamp_ms": 0,
        "action": action,
        "target": target,
    })
}

/// An engine on a manual clock with a shared gateway.
pub struct Rig {
    pub engine: Arc<Engine>,
    pub clock: Arc<ManualClock>,
    pub gateway: Arc<Gateway>,
}

impl Rig {
    pub fn new() -> Self {
        Self::with(EngineConfig::default(), Arc::new(Gateway::new()))
    }

    pub fn on_disk(dir: &Path) -> Self {
        Self::with(
            EngineConfig {
                data_dir: Some(dir.to_path_buf()),
                ..EngineConfig::default()
            },
            Arc::new(Gateway::new()),
        )
    }

    pub fn with(config: EngineConfig, gateway: Arc<Gateway>) -> Self {
        let clock = Arc::new(ManualClock::new(T0));
        let shared: Arc<dyn Clock> = clock.clone();
        let engine = Arc::new(Engine::open_with_gateway(config, shared, Arc::clone(&gateway)).expect("engine opens"));
        Self { engine, clock, gateway }
    }

    /// Registers a scripted provider under `model_ref` answering with `reply`.
    pub fn script(&self, model_ref: &str, reply: impl Fn(&str) -> String + Send + Sync + 'static) -> Arc<ScriptedProvider> {
        let p = Arc::new(ScriptedProvider::with_responder(move |req| {
            let last = req.messages.last().map(|m| m.text.clone()).unwrap_or_default();
            Ok(reply(&last))
        }));
        self.gateway.register(model_ref, p.clone(), ProviderLimits::default());
        p
    }

    pub fn session(&self, sid: &str, learner: &str, exp: &str, group: &str) -> SessionState {
        self.engine
            .create_session(NewSession {
                session_id: Some(sid.into()),
                learner_id: learner.into(),
                experiment_id: exp.into(),
                group: group.into(),
            })
            .expect("session created")
    }

    pub fn act(&self, session: &SessionState, action: &str, target: &str) -> IngestAck {
        self.engine
            .ingest(&raw_event(session, action, target), &session.session_id)
            .expect("event accepted")
    }
}

/// One line of the hand-labeled fixture.
#[derive(Debug, Clone)]
pub struct Expected {
    pub seq: u64,
    pub occurrence: String,
    /// (process, evidence) of the contingency label.
    pub contingency: Option<(String, Vec<u64>)>,
}

pub struct Fixture {
    pub events: Vec<TraceEvent>,
    pub expected: Vec<Expected>,
    /// (process, evidence) of each patterned label.
    pub patterns: Vec<(String, Vec<u64>)>,
}

pub fn load_fixture() -> Fixture {
    let text = include_str!("../fixtures/labeled_session.txt");
    let mut fx = Fixture {
        events: Vec::new(),
        expected: Vec::new(),
        patterns: Vec::new(),
    };
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols[0] == "pattern" {
            let ev = cols[2].split(',').map(|s| s.parse().unwrap()).collect();
            fx.patterns.push((cols[1].to_owned(), ev));
            continue;
        }
        let seq: u64 = cols[0].parse().unwrap();
        let secs: u64 = cols[1].parse().unwrap();
        let (action, target) = (cols[2], cols[3]);
        let mut payload = BTreeMap::new();
        if action == "PHASE_CHANGE" {
            payload.insert("phase".to_owned(), Value::String(target.to_owned()));
        }
        fx.events.push(TraceEvent {
            event_id: format!("fx-{seq}"),
            session_id: "fixture".into(),
            learner_id: "learner-1".into(),
            experiment_id: "fixture-exp".into(),
            client_timestamp_ms: (T0 + secs * 1000) as i64,
            server_seq: seq,
            server_time_ms: T0 + secs * 1000,
            action: ActionType::new_unchecked(action),
            target: target.to_owned(),
            payload,
        });
        let contingency = match cols[5] {
            "-" => None,
            c => Some(match c.split_once('<') {
                Some((p, prior)) => (p.to_owned(), vec![prior.parse().unwrap(), seq]),
                None => (c.to_owned(), vec![seq]),
            }),
        };
        fx.expected.push(Expected {
            seq,
            occurrence: cols[4].to_owned(),
            contingency,
        });
    }
    fx
}

pub mod gating {
    use super::*;
    use regulearn::admin::{ExperimentConfig, TaskConfig, TOOLS};
    use regulearn::agents::{AgentConfig, ChatMode, ChatSpec, ProviderParams};
    use regulearn::collab::DocOp;
    use regulearn::engine::{AnalysisKind, AnalyzeRequest, EngineError};
    use regulearn::model::Phase;
    use regulearn::scaffold::DeliveryStatus;
    use regulearn::writing::{Criterion, Rubric};
    use std::collections::BTreeSet;
    use std::path::PathBuf;

    pub const EXPERIMENT: &str = "gated";

    /// "CN" has no tools, "full" has all, "no_<tool>" lacks one.
    pub fn groups() -> BTreeMap<String, BTreeSet<String>> {
        let all: BTreeSet<String> = TOOLS.iter().map(|t| t.to_string()).collect();
        let mut g = BTreeMap::from([("CN".to_owned(), BTreeSet::new()), ("full".to_owned(), all.clone())]);
        for t in TOOLS {
            let mut s = all.clone();
            s.remove(t);
            g.insert(format!("no_{t}"), s);
        }
        g
    }

    pub fn session_of(group: &str) -> String {
        format!("s-{group}")
    }

    pub fn learner_of(group: &str) -> String {
        format!("l-{group}")
    }

    pub fn chat_spec(chat_id: &str, session_id: &str) -> ChatSpec {
        ChatSpec {
            chat_id: chat_id.into(),
            session_id: session_id.into(),
            mode: ChatMode::Shared,
            agents: vec![AgentConfig {
                agent_id: "tutor".into(),
                display_name: "Tutor".into(),
                avatar_ref: String::new(),
                pre_prompt: "You are a tutor.".into(),
                model_ref: "tutor".into(),
                params: ProviderParams::default(),
            }],
            doc_id: None,
        }
    }

    /// Builds a data dir with one session per group, each owning a chat, a
    /// document and a scaffold message, and an experiment configuration
    /// that is only applied on the next open. Returns the config to reopen.
    pub fn prepare(dir: &Path) -> EngineConfig {
        let mut rules: Value =
            serde_json::from_str(include_str!("../../data/scaffold_rules.json")).unwrap();
        let names: Vec<String> = groups().keys().cloned().collect();
        for r in rules["rules"].as_array_mut().unwrap() {
            r["applicable_groups"] = serde_json::json!(names);
        }
        let rules_path: PathBuf = dir.join("scaffold_rules.json");
        std::fs::write(&rules_path, rules.to_string()).unwrap();
        let config = EngineConfig {
            data_dir: Some(dir.to_path_buf()),
            scaffold_rules: Some(rules_path),
            ..EngineConfig::default()
        };
        {
            let rig = Rig::with(config.clone(), Arc::new(Gateway::new()));
            rig.script("tutor", |_| "Hello.".into());
            for g in &names {
                let sid = session_of(g);
                rig.session(&sid, &learner_of(g), EXPERIMENT, g);
                rig.engine.advance_phase(&sid, Phase::MainTask).unwrap();
                rig.engine.create_chat(chat_spec(&format!("chat-{g}"), &sid)).unwrap();
                rig.engine.create_doc(&format!("doc-{g}"), &sid).unwrap();
            }
            rig.clock.set(T0 + 120_000);
            assert_eq!(rig.engine.tick().len(), names.len());
            rig.engine.put_rubric(rubric()).unwrap();
            rig.engine.shutdown();
        }
        let exp = ExperimentConfig {
            experiment_id: EXPERIMENT.into(),
            name: "gating matrix".into(),
            owner: "lab".into(),
            groups: names,
            toolset: groups(),
            task: TaskConfig {
                duration_ms: 1_800_000,
                instruction_doc: "Write an essay.".into(),
                rubric_id: Some("r".into()),
                source_set_id: None,
            },
            scaffold_rule_file: None,
            chat_config: None,
        };
        let map = BTreeMap::from([(EXPERIMENT.to_owned(), exp)]);
        std::fs::write(dir.join("experiments.json"), serde_json::to_vec(&map).unwrap()).unwrap();
        config
    }

    pub fn rubric() -> Rubric {
        Rubric {
            rubric_id: "r".into(),
            criteria: vec![Criterion {
                name: "content".into(),
                description: "on topic".into(),
                max_points: 4,
            }],
        }
    }

    pub type Call = fn(&Engine, &str) -> Result<(), EngineError>;

    /// Every learner-facing engine entry point guarded by a tool, called on
    /// behalf of the session of group `g`.
    pub fn endpoints() -> Vec<(&'static str, &'static str, Call)> {
        fn g_of(sid: &str) -> &str {
            sid.trim_start_matches("s-")
        }
        vec![
            ("create_chat", "chat", |e, s| e.create_chat(chat_spec(&format!("new-{s}"), s)).map(drop)),
            ("send_turn", "chat", |e, s| e.send_turn(&format!("chat-{}", g_of(s)), "hi", "tutor").map(drop)),
            ("chat", "chat", |e, s| e.chat(&format!("chat-{}", g_of(s))).map(drop)),
            ("save_plan", "planner", |e, s| {
                e.save_plan(regulearn::admin::Plan {
                    session_id: s.into(),
                    main_strategy: regulearn::admin::STRATEGIES[0].into(),
                    allocations: vec![],
                    reading_strategy: String::new(),
                    writing_strategy: String::new(),
                })
                .map(drop)
            }),
            ("analyze", "writing_analytics", |e, s| {
                e.analyze(&AnalyzeRequest {
                    session_id: s.into(),
                    text: "We don't know.".into(),
                    kinds: vec![AnalysisKind::Academic],
                    source_set_id: None,
                    lexicon_id: None,
                })
                .map(drop)
            }),
            ("submit", "writing_analytics", |e, s| e.submit(s, "", None).map(drop)),
            ("create_doc", "collab_doc", |e, s| e.create_doc(&format!("new-{s}"), s)),
            ("submit_op", "collab_doc", |e, s| {
                let g = g_of(s);
                let op = DocOp::insert(&format!("doc-{g}"), &next_event_id(), &learner_of(g), 0, 0, "x");
                e.submit_op(s, op).map(drop)
            }),
            ("doc_content", "collab_doc", |e, s| e.doc_content(&format!("doc-{}", g_of(s)), s).map(drop)),
            ("replay_doc", "collab_doc", |e, s| e.replay_doc(&format!("doc-{}", g_of(s)), s, 0).map(drop)),
            ("subscribe_doc", "collab_doc", |e, s| e.subscribe_doc(&format!("doc-{}", g_of(s)), s, 0).map(drop)),
            ("timer", "timer", |e, s| e.timer(s).map(drop)),
            ("scaffold_messages", "instruction_panel", |e, s| e.scaffold_messages(s).map(drop)),
            ("subscribe_scaffolds", "instruction_panel", |e, s| e.subscribe_scaffolds(s, None).map(drop)),
            ("ack_scaffold", "instruction_panel", |e, s| {
                let id = e.scaffolds().messages(s)[0].message_id.clone();
                e.ack_scaffold(&id, DeliveryStatus::Shown).map(drop)
            }),
        ]
    }
}
