use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Dynamic-condition detection actions.
pub const SAVE_PLANNER: &str = "SAVE_PLANNER";
pub const TIMER: &str = "TIMER";
pub const TRY_OUT_TOOLS: &str = "TRY_OUT_TOOLS";
pub const PAGE_NAVIGATION: &str = "PAGE_NAVIGATION";
pub const TASK_REQUIREMENT: &str = "TASK_REQUIREMENT";
pub const RUBRIC: &str = "RUBRIC";

/// Engine-defined actions.
pub const ESSAY_EDIT: &str = "ESSAY_EDIT";
pub const NOTE_EDIT: &str = "NOTE_EDIT";
pub const ANNOTATION_CREATE: &str = "ANNOTATION_CREATE";
pub const CHAT_SEND: &str = "CHAT_SEND";
pub const CHAT_RECEIVE: &str = "CHAT_RECEIVE";
pub const DOC_OP: &str = "DOC_OP";
pub const PLAN_VIEW: &str = "PLAN_VIEW";
pub const SUBMIT_TEXT: &str = "SUBMIT_TEXT";
pub const SCAFFOLD_SHOWN: &str = "SCAFFOLD_SHOWN";
pub const SCAFFOLD_ACK: &str = "SCAFFOLD_ACK";
pub const SELF_TEST: &str = "SELF_TEST";
/// Session phase transition; payload `phase` names the new phase.
pub const PHASE_CHANGE: &str = "PHASE_CHANGE";
/// Scored pre-task instrument; payload carries `instrument` and `score`.
pub const INSTRUMENT_SUBMIT: &str = "INSTRUMENT_SUBMIT";

pub const BUILTIN_ACTIONS: &[&str] = &[
    SAVE_PLANNER,
    TIMER,
    TRY_OUT_TOOLS,
    PAGE_NAVIGATION,
    TASK_REQUIREMENT,
    RUBRIC,
    ESSAY_EDIT,
    NOTE_EDIT,
    ANNOTATION_CREATE,
    CHAT_SEND,
    CHAT_RECEIVE,
    DOC_OP,
    PLAN_VIEW,
    SUBMIT_TEXT,
    SCAFFOLD_SHOWN,
    SCAFFOLD_ACK,
    SELF_TEST,
    PHASE_CHANGE,
    INSTRUMENT_SUBMIT,
];

/// A learner action name that has been resolved against a [`Vocabulary`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionType(String);

impl ActionType {
    /// Builds an action without a vocabulary check. Callers outside the
    /// validation path should only pass the constants of this module.
    pub fn new_unchecked(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is(&self, name: &str) -> bool {
        self.0 == name
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ActionType {
    fn from(s: &str) -> Self {
        Self::new_unchecked(s)
    }
}

/// Registered action names. Lookups are hash-set membership tests.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    names: HashSet<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            names: BUILTIN_ACTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Vocabulary {
    /// Built-in actions plus additional instrumentation-defined names.
    pub fn with_extra<I, S>(extra: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::default();
        v.names.extend(extra.into_iter().map(Into::into));
        v
    }

    pub fn resolve(&self, name: &str) -> Option<ActionType> {
        self.names
            .contains(name)
            .then(|| ActionType::new_unchecked(name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}
