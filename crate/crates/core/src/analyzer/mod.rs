//! Event stream -> SRL labels, learning conditions and interval aggregates.

pub mod conditions;
pub mod instrument;
pub mod intervals;
pub mod labeler;
pub mod rules;

pub use conditions::{
    update_conditions, ConditionError, ConditionSnapshot, DynamicCondition, StatementTable, StaticCondition,
    StaticThresholds,
};
pub use instrument::{score_instrument, LengthMismatch};
pub use intervals::{aggregate_interval, EventMeta, IntervalAggregate, IntervalConfig, IntervalError};
pub use labeler::{label_stream, task_origin, Labeler, SrlLabel};
pub use rules::{LabelLevel, LabelRule, RuleError, RuleSet};

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::ingest::CommitListener;
use crate::model::TraceEvent;

#[derive(Debug, Clone)]
pub struct AnalyzerConfig {
    pub rules: Arc<RuleSet>,
    pub statements: Arc<StatementTable>,
    pub thresholds: StaticThresholds,
    pub intervals: IntervalConfig,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            rules: Arc::new(RuleSet::default_rules()),
            statements: Arc::new(StatementTable::default_table()),
            thresholds: StaticThresholds::default(),
            intervals: IntervalConfig::default(),
        }
    }
}

struct SessionAnalysis {
    labeler: Labeler,
    labels: Vec<SrlLabel>,
    conditions: ConditionSnapshot,
    events: Vec<EventMeta>,
}

/// Per-session analyzer state, fed by the event store in commit order.
pub struct AnalyzerHub {
    config: AnalyzerConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionAnalysis>>>>,
}

impl AnalyzerHub {
    pub fn new(config: AnalyzerConfig) -> Self {
        Self {
            config,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &AnalyzerConfig {
        &self.config
    }

    fn session(&self, session_id: &str) -> Arc<Mutex<SessionAnalysis>> {
        if let Some(s) = self.sessions.read().get(session_id) {
            return Arc::clone(s);
        }
        let mut map = self.sessions.write();
        Arc::clone(map.entry(session_id.to_owned()).or_insert_with(|| {
            Arc::new(Mutex::new(SessionAnalysis {
                labeler: Labeler::new(Arc::clone(&self.config.rules), session_id),
                labels: Vec::new(),
                conditions: ConditionSnapshot::initial(session_id, &self.config.statements, &self.config.thresholds),
                events: Vec::new(),
            }))
        }))
    }

    /// Processes the next event of a session. Events at or below the last
    /// processed sequence number are ignored.
    pub fn observe(&self, event: &TraceEvent) {
        let cell = self.session(&event.session_id);
        let mut s = cell.lock();
        if event.server_seq != s.events.len() as u64 {
            if event.server_seq > s.events.len() as u64 {
                tracing::warn!(
                    session = %event.session_id,
                    seq = event.server_seq,
                    expected = s.events.len(),
                    "analyzer saw a sequence gap"
                );
            }
            return;
        }
        let labels = s.labeler.push(event);
        s.labels.extend(labels);
        let next = update_conditions(&s.conditions, event, &self.config.statements, &self.config.thresholds)
            .expect("hub routes events by session");
        s.conditions = next;
        s.events.push(EventMeta {
            server_seq: event.server_seq,
            server_time_ms: event.server_time_ms,
            action: event.action.as_str().to_owned(),
        });
    }

    pub fn labels(&self, session_id: &str) -> Vec<SrlLabel> {
        self.peek(session_id, |s| s.labels.clone()).unwrap_or_default()
    }

    pub fn conditions(&self, session_id: &str) -> ConditionSnapshot {
        self.peek(session_id, |s| s.conditions.clone()).unwrap_or_else(|| {
            ConditionSnapshot::initial(session_id, &self.config.statements, &self.config.thresholds)
        })
    }

    pub fn task_origin(&self, session_id: &str) -> Option<u64> {
        self.peek(session_id, |s| s.labeler.task_origin_ms()).flatten()
    }

    pub fn event_count(&self, session_id: &str) -> u64 {
        self.peek(session_id, |s| s.events.len() as u64).unwrap_or(0)
    }

    pub fn aggregate(&self, session_id: &str, k: u64, now_ms: u64) -> Result<IntervalAggregate, IntervalError> {
        let (events, labels, origin) = self
            .peek(session_id, |s| (s.events.clone(), s.labels.clone(), s.labeler.task_origin_ms()))
            .unwrap_or_default();
        aggregate_interval(session_id, &events, &labels, origin, k, &self.config.intervals, now_ms)
    }

    /// Accounted milliseconds per action over the whole session.
    pub fn action_time_totals(&self, session_id: &str) -> BTreeMap<String, u64> {
        self.peek(session_id, |s| intervals::action_time_totals(&s.events, self.config.intervals.idle_cap_ms))
            .unwrap_or_default()
    }

    /// Labels paired with the actions of their evidence events.
    pub fn labels_with_actions(&self, session_id: &str) -> Vec<(SrlLabel, Vec<String>)> {
        self.peek(session_id, |s| {
            s.labels
                .iter()
                .map(|l| {
                    let actions = l
                        .evidence
                        .iter()
                        .filter_map(|&seq| s.events.get(seq as usize).map(|e| e.action.clone()))
                        .collect();
                    (l.clone(), actions)
                })
                .collect()
        })
        .unwrap_or_default()
    }

    fn peek<T>(&self, session_id: &str, f: impl FnOnce(&SessionAnalysis) -> T) -> Option<T> {
        let cell = self.sessions.read().get(session_id).cloned()?;
        let s = cell.lock();
        Some(f(&s))
    }
}

impl CommitListener for AnalyzerHub {
    fn on_commit(&self, event: &TraceEvent) {
        self.observe(event);
    }
}
