//! Label rule files.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{Phase, SrlProcessTaxonomy, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelLevel {
    Occurrence,
    Contingency,
    Patterned,
}

/// Half-open range on the task clock, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTimeRange {
    #[serde(default)]
    pub min: Option<i64>,
    #[serde(default)]
    pub max: Option<i64>,
}

impl TaskTimeRange {
    fn contains(&self, t: i64) -> bool {
        self.min.is_none_or(|m| t >= m) && self.max.is_none_or(|m| t < m)
    }
}

/// Conjunction of optional predicates. An absent predicate matches anything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchPattern {
    #[serde(default)]
    pub actions: BTreeSet<String>,
    #[serde(default)]
    pub target_prefix: Option<String>,
    #[serde(default)]
    pub phases: BTreeSet<Phase>,
    /// Some preceding event inside the contingency window has one of these actions.
    #[serde(default)]
    pub window_contains: BTreeSet<String>,
    #[serde(default)]
    pub window_excludes: BTreeSet<String>,
    #[serde(default)]
    pub history_contains: BTreeSet<String>,
    #[serde(default)]
    pub history_excludes: BTreeSet<String>,
    /// Whether the same (action, target) pair was seen earlier in the session.
    #[serde(default)]
    pub target_revisit: Option<bool>,
    /// Requires a started task clock.
    #[serde(default)]
    pub task_ms: Option<TaskTimeRange>,
    /// Patterned rules only: ordered steps, each a set of actions.
    #[serde(default)]
    pub sequence: Vec<BTreeSet<String>>,
    #[serde(default)]
    pub repetitions: Option<u32>,
}

/// What the matcher knows about the event and its preceding context.
pub struct MatchContext<'a> {
    pub event: &'a TraceEvent,
    pub phase: Phase,
    pub task_ms: Option<i64>,
    pub window_actions: &'a [(u64, &'a str)],
    pub history_has: &'a dyn Fn(&str) -> bool,
    pub target_revisit: bool,
}

impl MatchPattern {
    fn action_ok(&self, action: &str) -> bool {
        self.actions.is_empty() || self.actions.contains(action)
    }

    /// Evaluates the single-event predicates. Total: never fails.
    pub fn matches(&self, cx: &MatchContext<'_>) -> bool {
        let e = cx.event;
        if !self.action_ok(e.action.as_str()) {
            return false;
        }
        if let Some(p) = &self.target_prefix {
            if !e.target.starts_with(p.as_str()) {
                return false;
            }
        }
        if !self.phases.is_empty() && !self.phases.contains(&cx.phase) {
            return false;
        }
        if let Some(range) = &self.task_ms {
            match cx.task_ms {
                Some(t) if range.contains(t) => {}
                _ => return false,
            }
        }
        if let Some(want) = self.target_revisit {
            if want != cx.target_revisit {
                return false;
            }
        }
        if !self.window_contains.is_empty()
            && !cx.window_actions.iter().any(|(_, a)| self.window_contains.contains(*a))
        {
            return false;
        }
        if cx.window_actions.iter().any(|(_, a)| self.window_excludes.contains(*a)) {
            return false;
        }
        if !self.history_contains.is_empty()
            && !self.history_contains.iter().any(|a| (cx.history_has)(a))
        {
            return false;
        }
        if self.history_excludes.iter().any(|a| (cx.history_has)(a)) {
            return false;
        }
        true
    }

    /// Most recent window event satisfying `window_contains`.
    pub fn window_evidence(&self, window: &[(u64, &str)]) -> Option<u64> {
        if self.window_contains.is_empty() {
            return None;
        }
        window
            .iter()
            .rev()
            .find(|(_, a)| self.window_contains.contains(*a))
            .map(|(s, _)| *s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub rule_id: String,
    pub level: LabelLevel,
    #[serde(rename = "match")]
    pub pattern: MatchPattern,
    pub emit: String,
    #[serde(default)]
    pub priority: i32,
}

/// Contingency window: the preceding `max_events` events, further limited to
/// those within `max_ms` of the current event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub max_ms: u64,
    pub max_events: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            max_ms: 120_000,
            max_events: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaxonomyRef {
    Builtin(String),
    Custom(SrlProcessTaxonomy),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleFile {
    pub taxonomy: TaxonomyRef,
    #[serde(default)]
    pub window: WindowSpec,
    pub rules: Vec<LabelRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("taxonomy `{0}` is not configured")]
    TaxonomyUnknown(String),
    #[error("rule `{rule}` emits `{process}`, which is not in the taxonomy")]
    UnknownProcess { rule: String, process: String },
    #[error("rule `{0}` is declared twice")]
    DuplicateRule(String),
    #[error("patterned rule `{0}` needs a non-empty sequence and repetitions >= 1")]
    BadPattern(String),
    #[error("rule file: {0}")]
    Parse(String),
}

/// A validated rule set bound to its taxonomy. Rules are stored in
/// evaluation order: priority descending, then rule id ascending.
#[derive(Debug, Clone)]
pub struct RuleSet {
    pub taxonomy: SrlProcessTaxonomy,
    pub window: WindowSpec,
    rules: Vec<LabelRule>,
}

pub const DEFAULT_RULES_JSON: &str = include_str!("../../data/label_rules.json");

impl RuleSet {
    pub fn from_json(text: &str) -> Result<Self, RuleError> {
        let file: RuleFile = serde_json::from_str(text).map_err(|e| RuleError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn from_file(file: RuleFile) -> Result<Self, RuleError> {
        let taxonomy = match file.taxonomy {
            TaxonomyRef::Builtin(id) => {
                SrlProcessTaxonomy::builtin_by_id(&id).ok_or(RuleError::TaxonomyUnknown(id))?
            }
            TaxonomyRef::Custom(t) => t,
        };
        Self::new(taxonomy, file.window, file.rules)
    }

    pub fn new(taxonomy: SrlProcessTaxonomy, window: WindowSpec, mut rules: Vec<LabelRule>) -> Result<Self, RuleError> {
        let mut ids = BTreeSet::new();
        for r in &rules {
            if !ids.insert(r.rule_id.clone()) {
                return Err(RuleError::DuplicateRule(r.rule_id.clone()));
            }
            if !taxonomy.contains(&r.emit) {
                return Err(RuleError::UnknownProcess {
                    rule: r.rule_id.clone(),
                    process: r.emit.clone(),
                });
            }
            if r.level == LabelLevel::Patterned
                && (r.pattern.sequence.is_empty() || r.pattern.repetitions.unwrap_or(0) == 0)
            {
                return Err(RuleError::BadPattern(r.rule_id.clone()));
            }
        }
        rules.sort_by(|a, b| b.priority.cmp(&a.priority).then_with(|| a.rule_id.cmp(&b.rule_id)));
        Ok(Self {
            taxonomy,
            window,
            rules,
        })
    }

    pub fn default_rules() -> Self {
        Self::from_json(DEFAULT_RULES_JSON).expect("bundled label rules are valid")
    }

    /// Replaces the taxonomy, keeping the rules (e.g. COPES -> Zimmerman).
    pub fn with_taxonomy(self, taxonomy: SrlProcessTaxonomy) -> Result<Self, RuleError> {
        Self::new(taxonomy, self.window, self.rules)
    }

    pub fn rules(&self, level: LabelLevel) -> impl Iterator<Item = &LabelRule> {
        self.rules.iter().filter(move |r| r.level == level)
    }
}
