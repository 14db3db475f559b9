use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::analyzer::ConditionSnapshot;

pub const SLOTS: [&str; 4] = ["task_description", "missing_process", "condition_statements", "style_constraints"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerRule {
    pub rule_id: String,
    pub critical_process: String,
    /// When non-empty, only labels backed by one of these actions count as
    /// evidence of the critical process.
    #[serde(default)]
    pub evidence_actions: Vec<String>,
    /// Absence deadline on the task clock.
    #[serde(default)]
    pub deadline_ms: Option<u64>,
    /// Absence window `[start, end)` on the task clock.
    #[serde(default)]
    pub window: Option<(u64, u64)>,
    pub applicable_groups: BTreeSet<String>,
    pub template_id: String,
    #[serde(default = "yes")]
    pub one_shot: bool,
    /// Wording bound to the `missing_process` slot; defaults to the process name.
    #[serde(default)]
    pub process_hint: Option<String>,
}

fn yes() -> bool {
    true
}

impl TriggerRule {
    /// Task-clock range in which the critical process must appear.
    pub fn absence_range(&self) -> (i64, u64) {
        match (self.deadline_ms, self.window) {
            (_, Some((start, end))) => (start as i64, end),
            (Some(d), None) => (i64::MIN, d),
            (None, None) => (i64::MIN, 0),
        }
    }

    /// Task time at which the rule becomes due.
    pub fn due_at(&self) -> u64 {
        self.absence_range().1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub template_id: String,
    /// Text with `{{slot}}` placeholders.
    pub body: String,
    pub style_constraints: String,
    /// Delivered when no model reply is available. May use the same slots.
    pub fallback: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Personalization {
    ProcessOnly,
    ProcessWithConditions,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("could not parse scaffold rules: {0}")]
    Parse(String),
    #[error("rule `{rule}` names unknown template `{template}`")]
    TemplateUnknown { rule: String, template: String },
    #[error("template `{template}` uses undeclared slot `{slot}`")]
    UndeclaredSlot { template: String, slot: String },
    #[error("template `{template}` has an unterminated placeholder")]
    Unterminated { template: String },
    #[error("rule `{0}` needs a positive deadline or a non-empty window")]
    BadTiming(String),
    #[error("rule id `{0}` is duplicated")]
    DuplicateRule(String),
    #[error("template id `{0}` is duplicated")]
    DuplicateTemplate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaffoldConfig {
    pub model_ref: String,
    pub system_prompt: String,
    /// Group label to prompt personalization. Unlisted groups get process-only prompts.
    #[serde(default)]
    pub personalization: BTreeMap<String, Personalization>,
    pub templates: Vec<PromptTemplate>,
    pub rules: Vec<TriggerRule>,
}

impl ScaffoldConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn default_rules() -> Self {
        Self::from_json(include_str!("../../data/scaffold_rules.json")).expect("bundled scaffold rules are valid")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut templates = HashMap::new();
        for t in &self.templates {
            if templates.insert(t.template_id.as_str(), t).is_some() {
                return Err(ConfigError::DuplicateTemplate(t.template_id.clone()));
            }
            for text in [&t.body, &t.fallback] {
                for slot in placeholders(text).map_err(|_| ConfigError::Unterminated {
                    template: t.template_id.clone(),
                })? {
                    if !SLOTS.contains(&slot) {
                        return Err(ConfigError::UndeclaredSlot {
                            template: t.template_id.clone(),
                            slot: slot.to_owned(),
                        });
                    }
                }
            }
        }
        let mut ids = BTreeSet::new();
        for r in &self.rules {
            if !ids.insert(r.rule_id.as_str()) {
                return Err(ConfigError::DuplicateRule(r.rule_id.clone()));
            }
            let timing_ok = match (r.deadline_ms, r.window) {
                (_, Some((s, e))) => s < e,
                (Some(d), None) => d > 0,
                (None, None) => false,
            };
            if !timing_ok {
                return Err(ConfigError::BadTiming(r.rule_id.clone()));
            }
            if !templates.contains_key(r.template_id.as_str()) {
                return Err(ConfigError::TemplateUnknown {
                    rule: r.rule_id.clone(),
                    template: r.template_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn template(&self, id: &str) -> Option<&PromptTemplate> {
        self.templates.iter().find(|t| t.template_id == id)
    }

    pub fn rule(&self, id: &str) -> Option<&TriggerRule> {
        self.rules.iter().find(|r| r.rule_id == id)
    }

    pub fn personalization_of(&self, group: &str) -> Personalization {
        self.personalization
            .get(group)
            .copied()
            .unwrap_or(Personalization::ProcessOnly)
    }
}

/// Placeholder names in order of appearance.
pub fn placeholders(text: &str) -> Result<Vec<&str>, ()> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find("{{") {
        let after = &rest[i + 2..];
        let j = after.find("}}").ok_or(())?;
        out.push(after[..j].trim());
        rest = &after[j + 2..];
    }
    Ok(out)
}

/// Replaces every `{{slot}}` with its binding. Fails on the first unbound slot.
pub fn render(text: &str, bindings: &BTreeMap<&str, String>) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find("{{") {
        out.push_str(&rest[..i]);
        let after = &rest[i + 2..];
        let j = after.find("}}").ok_or_else(|| "unterminated placeholder".to_owned())?;
        let name = after[..j].trim();
        out.push_str(bindings.get(name).ok_or_else(|| name.to_owned())?);
        rest = &after[j + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Inputs that fully determine a rendered prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInputs {
    pub rule: TriggerRule,
    pub template: PromptTemplate,
    pub snapshot: ConditionSnapshot,
    pub personalization: Personalization,
    pub task_description: String,
}

impl PromptInputs {
    pub fn bindings(&self) -> BTreeMap<&'static str, String> {
        let statements = match self.personalization {
            Personalization::ProcessWithConditions => self
                .snapshot
                .statements
                .iter()
                .map(|s| format!("- {s}"))
                .collect::<Vec<_>>()
                .join("\n"),
            Personalization::ProcessOnly => String::new(),
        };
        BTreeMap::from([
            ("task_description", self.task_description.clone()),
            (
                "missing_process",
                self.rule.process_hint.clone().unwrap_or_else(|| self.rule.critical_process.clone()),
            ),
            ("condition_statements", statements),
            ("style_constraints", self.template.style_constraints.clone()),
        ])
    }

    pub fn render_prompt(&self) -> Result<String, String> {
        render(&self.template.body, &self.bindings())
    }

    pub fn render_fallback(&self) -> Result<String, String> {
        render(&self.template.fallback, &self.bindings())
    }
}
