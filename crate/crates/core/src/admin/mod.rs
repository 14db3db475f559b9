//! Experiment configuration, tool gating, search, dataset statistics and the
//! planner.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::model::TraceEvent;

pub const TOOLS: [&str; 6] = ["chat", "planner", "writing_analytics", "collab_doc", "timer", "instruction_panel"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdminError {
    #[error("experiment `{0}` is unknown")]
    ExperimentUnknown(String),
    #[error("experiment `{0}` already has sessions and can no longer be reconfigured")]
    ExperimentStarted(String),
    #[error("tool `{0}` is not registered")]
    UnknownTool(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("session `{0}` is unknown")]
    SessionUnknown(String),
    #[error("session `{0}` has no events")]
    NoEvents(String),
    #[error("`{0}` is not one of the planner strategies")]
    InvalidStrategy(String),
    #[error("tool `{tool}` is disabled for group `{group}`")]
    ToolDisabled { tool: String, group: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub duration_ms: u64,
    #[serde(default)]
    pub instruction_doc: String,
    #[serde(default)]
    pub rubric_id: Option<String>,
    #[serde(default)]
    pub source_set_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub name: String,
    /// Account that owns the experiment.
    #[serde(default)]
    pub owner: String,
    pub groups: Vec<String>,
    /// Enabled tools per group.
    pub toolset: BTreeMap<String, BTreeSet<String>>,
    pub task: TaskConfig,
    #[serde(default)]
    pub scaffold_rule_file: Option<String>,
    #[serde(default)]
    pub chat_config: Option<serde_json::Value>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), AdminError> {
        if self.experiment_id.trim().is_empty() {
            return Err(AdminError::Validation("experiment_id is empty".into()));
        }
        if self.groups.is_empty() {
            return Err(AdminError::Validation("at least one group is required".into()));
        }
        let mut seen = HashSet::new();
        for g in &self.groups {
            if !seen.insert(g) {
                return Err(AdminError::Validation(format!("group `{g}` is listed twice")));
            }
        }
        if self.task.duration_ms == 0 {
            return Err(AdminError::Validation("task duration must be positive".into()));
        }
        for (group, tools) in &self.toolset {
            if !seen.contains(group) {
                return Err(AdminError::Validation(format!("toolset names unknown group `{group}`")));
            }
            if let Some(t) = tools.iter().find(|t| !TOOLS.contains(&t.as_str())) {
                return Err(AdminError::UnknownTool(t.clone()));
            }
        }
        Ok(())
    }

    pub fn tool_enabled(&self, group: &str, tool: &str) -> bool {
        self.toolset.get(group).is_some_and(|t| t.contains(tool))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub experiment_id: String,
    pub name: String,
    pub score: f64,
}

fn field_score(query: &str, field: &str) -> Option<f64> {
    let field = field.to_lowercase();
    if field.is_empty() {
        return None;
    }
    if field == query {
        return Some(3.0);
    }
    if field.contains(query) {
        return Some(2.0 + query.chars().count() as f64 / field.chars().count() as f64);
    }
    let best = std::iter::once(field.as_str())
        .chain(field.split_whitespace())
        .map(|w| strsim::damerau_levenshtein(query, w))
        .min()?;
    (best <= 2).then(|| 1.0 + (2 - best) as f64 / 3.0)
}

/// Case-insensitive matching on experiment name, owner and id: exact match,
/// then substring, then Damerau-Levenshtein distance at most 2. An empty
/// query lists everything. Ordered by score, then name, then id.
pub fn search_experiments<'a>(experiments: impl IntoIterator<Item = &'a ExperimentConfig>, query: &str) -> Vec<SearchHit> {
    let q = query.trim().to_lowercase();
    let mut hits: Vec<SearchHit> = experiments
        .into_iter()
        .filter_map(|e| {
            let score = if q.is_empty() {
                Some(0.0)
            } else {
                [&e.name, &e.owner, &e.experiment_id]
                    .into_iter()
                    .filter_map(|f| field_score(&q, f))
                    .reduce(f64::max)
            }?;
            Some(SearchHit {
                experiment_id: e.experiment_id.clone(),
                name: e.name.clone(),
                score,
            })
        })
        .collect();
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.name.cmp(&b.name))
            .then_with(|| a.experiment_id.cmp(&b.experiment_id))
    });
    hits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentStats {
    pub experiment_id: String,
    pub participant_count: u64,
    pub avg_events_per_participant: f64,
    pub total_events: u64,
    /// Event count per action.
    pub events_per_tool: BTreeMap<String, u64>,
}

/// Statistics over an experiment's events. Participants are distinct
/// learners with at least one event.
pub fn compute_stats<'a>(experiment_id: &str, events: impl IntoIterator<Item = &'a TraceEvent>) -> ExperimentStats {
    let mut learners = BTreeSet::new();
    let mut per_tool = BTreeMap::new();
    let mut total = 0u64;
    for e in events {
        learners.insert(e.learner_id.as_str());
        *per_tool.entry(e.action.as_str().to_owned()).or_insert(0) += 1;
        total += 1;
    }
    let n = learners.len() as u64;
    ExperimentStats {
        experiment_id: experiment_id.to_owned(),
        participant_count: n,
        avg_events_per_participant: if n == 0 { 0.0 } else { total as f64 / n as f64 },
        total_events: total,
        events_per_tool: per_tool,
    }
}

/// Normalizes accounted time per action to proportions. When no time is
/// accounted (a single event, or all gaps zero) the event counts are used.
pub fn time_proportions(
    time_ms: &BTreeMap<String, u64>,
    event_counts: &BTreeMap<String, u64>,
) -> BTreeMap<String, f64> {
    let basis = if time_ms.values().any(|&v| v > 0) { time_ms } else { event_counts };
    let total: u64 = basis.values().sum();
    if total == 0 {
        return BTreeMap::new();
    }
    basis
        .iter()
        .filter(|(_, &v)| v > 0)
        .map(|(k, &v)| (k.clone(), v as f64 / total as f64))
        .collect()
}

pub const STRATEGIES: [&str; 3] = [
    "Read first, then write",
    "Read and write simultaneously",
    "Write intensively while reading selectively",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub task_name: String,
    pub minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub session_id: String,
    pub main_strategy: String,
    #[serde(default)]
    pub allocations: Vec<Allocation>,
    #[serde(default)]
    pub reading_strategy: String,
    #[serde(default)]
    pub writing_strategy: String,
}

impl Plan {
    pub fn validate(&self) -> Result<(), AdminError> {
        if !STRATEGIES.contains(&self.main_strategy.as_str()) {
            return Err(AdminError::InvalidStrategy(self.main_strategy.clone()));
        }
        if let Some(a) = self.allocations.iter().find(|a| !(a.minutes >= 0.0 && a.minutes.is_finite())) {
            return Err(AdminError::Validation(format!("allocation `{}` has invalid minutes", a.task_name)));
        }
        Ok(())
    }
}
