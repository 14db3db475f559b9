//! Dynamic and static learning conditions and their prompt statements.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::action::{
    INSTRUMENT_SUBMIT, PAGE_NAVIGATION, RUBRIC, SAVE_PLANNER, TASK_REQUIREMENT, TIMER, TRY_OUT_TOOLS,
};
use crate::model::TraceEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicCondition {
    PlanMade,
    TimeAware,
    ToolsAware,
    MaterialAware,
    RequirementAware,
    RubricAware,
}

impl DynamicCondition {
    /// Statement order.
    pub const ALL: [DynamicCondition; 6] = [
        DynamicCondition::PlanMade,
        DynamicCondition::TimeAware,
        DynamicCondition::ToolsAware,
        DynamicCondition::MaterialAware,
        DynamicCondition::RequirementAware,
        DynamicCondition::RubricAware,
    ];

    /// The single action that establishes the condition.
    pub fn detecting_action(self) -> &'static str {
        match self {
            DynamicCondition::PlanMade => SAVE_PLANNER,
            DynamicCondition::TimeAware => TIMER,
            DynamicCondition::ToolsAware => TRY_OUT_TOOLS,
            DynamicCondition::MaterialAware => PAGE_NAVIGATION,
            DynamicCondition::RequirementAware => TASK_REQUIREMENT,
            DynamicCondition::RubricAware => RUBRIC,
        }
    }

    pub fn from_action(action: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.detecting_action() == action)
    }

    pub fn key(self) -> &'static str {
        match self {
            DynamicCondition::PlanMade => "plan_made",
            DynamicCondition::TimeAware => "time_aware",
            DynamicCondition::ToolsAware => "tools_aware",
            DynamicCondition::MaterialAware => "material_aware",
            DynamicCondition::RequirementAware => "requirement_aware",
            DynamicCondition::RubricAware => "rubric_aware",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticCondition {
    StrategyKnowledge,
    PriorKnowledge,
}

impl StaticCondition {
    pub const ALL: [StaticCondition; 2] = [StaticCondition::StrategyKnowledge, StaticCondition::PriorKnowledge];

    pub fn key(self) -> &'static str {
        match self {
            StaticCondition::StrategyKnowledge => "strategy_knowledge",
            StaticCondition::PriorKnowledge => "prior_knowledge",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.key() == key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Polarity {
    pub present: String,
    pub absent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level {
    pub high: String,
    pub low: String,
}

/// Condition x polarity -> exact statement text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementTable {
    pub dynamic: BTreeMap<DynamicCondition, Polarity>,
    #[serde(rename = "static")]
    pub static_: BTreeMap<StaticCondition, Level>,
}

pub const DEFAULT_STATEMENTS_JSON: &str = include_str!("../../data/statements.json");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConditionError {
    #[error("event belongs to session `{event}`, snapshot to `{snapshot}`")]
    SessionMismatch { snapshot: String, event: String },
    #[error("statement table: {0}")]
    Table(String),
}

impl StatementTable {
    pub fn from_json(text: &str) -> Result<Self, ConditionError> {
        let t: Self = serde_json::from_str(text).map_err(|e| ConditionError::Table(e.to_string()))?;
        for c in DynamicCondition::ALL {
            if !t.dynamic.contains_key(&c) {
                return Err(ConditionError::Table(format!("missing statements for {}", c.key())));
            }
        }
        for c in StaticCondition::ALL {
            if !t.static_.contains_key(&c) {
                return Err(ConditionError::Table(format!("missing statements for {}", c.key())));
            }
        }
        Ok(t)
    }

    pub fn default_table() -> Self {
        Self::from_json(DEFAULT_STATEMENTS_JSON).expect("bundled statement table is valid")
    }

    pub fn dynamic_statement(&self, c: DynamicCondition, present: bool) -> &str {
        let p = &self.dynamic[&c];
        if present {
            &p.present
        } else {
            &p.absent
        }
    }

    pub fn static_statement(&self, c: StaticCondition, high: bool) -> &str {
        let l = &self.static_[&c];
        if high {
            &l.high
        } else {
            &l.low
        }
    }
}

/// Score at or above which a static condition renders as "high".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticThresholds {
    pub strategy_knowledge_high: f64,
    pub prior_knowledge_high: f64,
}

impl Default for StaticThresholds {
    fn default() -> Self {
        Self {
            strategy_knowledge_high: 0.6,
            prior_knowledge_high: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicFlags {
    pub plan_made: bool,
    pub time_aware: bool,
    pub tools_aware: bool,
    pub material_aware: bool,
    pub requirement_aware: bool,
    pub rubric_aware: bool,
}

impl DynamicFlags {
    pub fn get(&self, c: DynamicCondition) -> bool {
        match c {
            DynamicCondition::PlanMade => self.plan_made,
            DynamicCondition::TimeAware => self.time_aware,
            DynamicCondition::ToolsAware => self.tools_aware,
            DynamicCondition::MaterialAware => self.material_aware,
            DynamicCondition::RequirementAware => self.requirement_aware,
            DynamicCondition::RubricAware => self.rubric_aware,
        }
    }

    fn set(&mut self, c: DynamicCondition) {
        match c {
            DynamicCondition::PlanMade => self.plan_made = true,
            DynamicCondition::TimeAware => self.time_aware = true,
            DynamicCondition::ToolsAware => self.tools_aware = true,
            DynamicCondition::MaterialAware => self.material_aware = true,
            DynamicCondition::RequirementAware => self.requirement_aware = true,
            DynamicCondition::RubricAware => self.rubric_aware = true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StaticScores {
    pub strategy_knowledge_score: f64,
    pub prior_knowledge_score: f64,
}

/// Current conditions of a session plus the 8 rendered statements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSnapshot {
    pub session_id: String,
    pub dynamic: DynamicFlags,
    #[serde(rename = "static")]
    pub static_: StaticScores,
    pub statements: Vec<String>,
}

impl ConditionSnapshot {
    pub fn initial(session_id: impl Into<String>, table: &StatementTable, thresholds: &StaticThresholds) -> Self {
        let mut s = Self {
            session_id: session_id.into(),
            dynamic: DynamicFlags::default(),
            static_: StaticScores::default(),
            statements: Vec::new(),
        };
        s.statements = render_statements(&s.dynamic, &s.static_, table, thresholds);
        s
    }

    pub fn dynamic_statements(&self) -> &[String] {
        &self.statements[..DynamicCondition::ALL.len()]
    }
}

/// Six dynamic statements in table order, then the two static ones.
pub fn render_statements(
    dynamic: &DynamicFlags,
    scores: &StaticScores,
    table: &StatementTable,
    thresholds: &StaticThresholds,
) -> Vec<String> {
    let mut out: Vec<String> = DynamicCondition::ALL
        .iter()
        .map(|&c| table.dynamic_statement(c, dynamic.get(c)).to_owned())
        .collect();
    out.push(
        table
            .static_statement(
                StaticCondition::StrategyKnowledge,
                scores.strategy_knowledge_score >= thresholds.strategy_knowledge_high,
            )
            .to_owned(),
    );
    out.push(
        table
            .static_statement(
                StaticCondition::PriorKnowledge,
                scores.prior_knowledge_score >= thresholds.prior_knowledge_high,
            )
            .to_owned(),
    );
    out
}

/// Returns the snapshot after `event`. Detection actions set their flag;
/// flags never clear. `INSTRUMENT_SUBMIT` events update static scores.
pub fn update_conditions(
    snapshot: &ConditionSnapshot,
    event: &TraceEvent,
    table: &StatementTable,
    thresholds: &StaticThresholds,
) -> Result<ConditionSnapshot, ConditionError> {
    if snapshot.session_id != event.session_id {
        return Err(ConditionError::SessionMismatch {
            snapshot: snapshot.session_id.clone(),
            event: event.session_id.clone(),
        });
    }
    let mut next = snapshot.clone();
    if let Some(c) = DynamicCondition::from_action(event.action.as_str()) {
        next.dynamic.set(c);
    }
    if event.action.is(INSTRUMENT_SUBMIT) {
        let which = event.payload_str("instrument").and_then(StaticCondition::from_key);
        let score = event.payload.get("score").and_then(|v| v.as_f64());
        if let (Some(which), Some(score)) = (which, score) {
            let score = score.clamp(0.0, 1.0);
            match which {
                StaticCondition::StrategyKnowledge => next.static_.strategy_knowledge_score = score,
                StaticCondition::PriorKnowledge => next.static_.prior_knowledge_score = score,
            }
        }
    }
    next.statements = render_statements(&next.dynamic, &next.static_, table, thresholds);
    Ok(next)
}
