use serde::{Deserialize, Serialize};

use super::event::check_identifier;
use super::ValidationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PreTask,
    Training,
    MainTask,
    PostTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Completed,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("task clock already started at {0} ms")]
    TaskAlreadyStarted(u64),
    #[error("phase cannot move from {from:?} to {to:?}")]
    IllegalPhase { from: Phase, to: Phase },
    #[error("session is not active")]
    NotActive,
}

/// A learner's participation in one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub learner_id: String,
    pub experiment_id: String,
    /// Origin of the task clock; set once, on entering `MainTask`.
    pub task_started_at_ms: Option<u64>,
    group: String,
    pub phase: Phase,
    pub status: SessionStatus,
}

impl SessionState {
    pub fn new(
        session_id: impl Into<String>,
        learner_id: impl Into<String>,
        experiment_id: impl Into<String>,
        group: impl Into<String>,
    ) -> Result<Self, ValidationError> {
        let s = Self {
            session_id: session_id.into(),
            learner_id: learner_id.into(),
            experiment_id: experiment_id.into(),
            task_started_at_ms: None,
            group: group.into(),
            phase: Phase::PreTask,
            status: SessionStatus::Active,
        };
        check_identifier("session_id", &s.session_id)?;
        check_identifier("learner_id", &s.learner_id)?;
        check_identifier("experiment_id", &s.experiment_id)?;
        check_identifier("group", &s.group)?;
        Ok(s)
    }

    /// Experimental arm. Fixed at creation.
    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn is_active(&self) -> bool {
        self.status == SessionStatus::Active
    }

    /// Moves the session forward. Entering `MainTask` starts the task clock.
    pub fn advance(&mut self, to: Phase, now_ms: u64) -> Result<(), SessionError> {
        if !self.is_active() {
            return Err(SessionError::NotActive);
        }
        if to <= self.phase {
            return Err(SessionError::IllegalPhase { from: self.phase, to });
        }
        if to >= Phase::MainTask && self.task_started_at_ms.is_none() {
            self.task_started_at_ms = Some(now_ms);
        } else if to == Phase::MainTask {
            if let Some(t) = self.task_started_at_ms {
                return Err(SessionError::TaskAlreadyStarted(t));
            }
        }
        self.phase = to;
        Ok(())
    }

    pub fn finish(&mut self, status: SessionStatus) {
        self.status = status;
    }

    /// Milliseconds on the task clock, negative before the task starts.
    /// Without a started task the clock reads from `fallback_origin_ms`.
    pub fn task_clock(&self, server_time_ms: u64, fallback_origin_ms: u64) -> i64 {
        let origin = self.task_started_at_ms.unwrap_or(fallback_origin_ms);
        server_time_ms as i64 - origin as i64
    }
}
