use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::rules::{LabelLevel, LabelRule, MatchContext, RuleSet};
use crate::model::action::PHASE_CHANGE;
use crate::model::taxonomy::UNCLASSIFIED;
use crate::model::{Phase, TraceEvent};

pub const UNCLASSIFIED_RULE: &str = "unclassified";

/// An SRL process assigned to one event or a window of events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlLabel {
    pub session_id: String,
    pub level: LabelLevel,
    pub process: String,
    pub evidence: Vec<u64>,
    /// Inclusive `server_seq` bounds.
    pub window: (u64, u64),
    pub rule_id: String,
    /// Server time of the event at `window.0`.
    pub start_time_ms: u64,
}

#[derive(Debug, Clone, Default)]
struct CycleProgress {
    step: usize,
    current: Vec<(u64, u64)>,
    completed: Vec<Vec<(u64, u64)>>,
}

/// Incremental labeler for one session. Feed events in `server_seq` order.
#[derive(Debug, Clone)]
pub struct Labeler {
    rules: Arc<RuleSet>,
    session_id: String,
    window: VecDeque<(u64, u64, String)>,
    seen_actions: HashSet<String>,
    seen_targets: HashSet<(String, String)>,
    phase: Phase,
    task_origin_ms: Option<u64>,
    cycles: Vec<CycleProgress>,
}

/// Reads the phase named in a `PHASE_CHANGE` payload.
pub fn phase_of(event: &TraceEvent) -> Option<Phase> {
    if !event.action.is(PHASE_CHANGE) {
        return None;
    }
    serde_json::from_value(event.payload.get("phase")?.clone()).ok()
}

/// Task clock origin: server time of the first transition into the main
/// task (or later). `None` when the stream never starts the task.
pub fn task_origin(events: &[TraceEvent]) -> Option<u64> {
    events
        .iter()
        .find(|e| phase_of(e).is_some_and(|p| p >= Phase::MainTask))
        .map(|e| e.server_time_ms)
}

impl Labeler {
    pub fn new(rules: Arc<RuleSet>, session_id: impl Into<String>) -> Self {
        let cycles = vec![CycleProgress::default(); rules.rules(LabelLevel::Patterned).count()];
        Self {
            rules,
            session_id: session_id.into(),
            window: VecDeque::new(),
            seen_actions: HashSet::new(),
            seen_targets: HashSet::new(),
            phase: Phase::PreTask,
            task_origin_ms: None,
            cycles,
        }
    }

    pub fn task_origin_ms(&self) -> Option<u64> {
        self.task_origin_ms
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Labels for one event: exactly one occurrence label, at most one
    /// contingency label, and any patterned labels completed by it.
    pub fn push(&mut self, event: &TraceEvent) -> Vec<SrlLabel> {
        if let Some(p) = phase_of(event) {
            if p > self.phase {
                self.phase = p;
            }
            if p >= Phase::MainTask && self.task_origin_ms.is_none() {
                self.task_origin_ms = Some(event.server_time_ms);
            }
        }
        let now = event.server_time_ms;
        let task_ms = self.task_origin_ms.map(|o| now as i64 - o as i64);
        let max_ms = self.rules.window.max_ms;
        let window: Vec<(u64, &str)> = self
            .window
            .iter()
            .filter(|(_, t, _)| now.saturating_sub(*t) <= max_ms)
            .map(|(s, _, a)| (*s, a.as_str()))
            .collect();
        let target_key = (event.action.as_str().to_owned(), event.target.clone());
        let revisit = self.seen_targets.contains(&target_key);
        let seen = &self.seen_actions;
        let history_has = |a: &str| seen.contains(a);
        let cx = MatchContext {
            event,
            phase: self.phase,
            task_ms,
            window_actions: &window,
            history_has: &history_has,
            target_revisit: revisit,
        };

        let seq = event.server_seq;
        let mut out = Vec::new();
        let occurrence = self.rules.rules(LabelLevel::Occurrence).find(|r| r.pattern.matches(&cx));
        out.push(match occurrence {
            Some(rule) => self.single(rule, event),
            None => SrlLabel {
                session_id: self.session_id.clone(),
                level: LabelLevel::Occurrence,
                process: UNCLASSIFIED.into(),
                evidence: vec![seq],
                window: (seq, seq),
                rule_id: UNCLASSIFIED_RULE.into(),
                start_time_ms: now,
            },
        });

        if let Some(rule) = self.rules.rules(LabelLevel::Contingency).find(|r| r.pattern.matches(&cx)) {
            let mut label = self.single(rule, event);
            if let Some(prior) = rule.pattern.window_evidence(&window) {
                label.evidence = vec![prior, seq];
                label.window = (prior, seq);
                label.start_time_ms = self
                    .window
                    .iter()
                    .find(|(s, _, _)| *s == prior)
                    .map(|(_, t, _)| *t)
                    .unwrap_or(now);
            }
            out.push(label);
        }

        let patterned: Vec<&LabelRule> = self.rules.rules(LabelLevel::Patterned).collect();
        for (rule, progress) in patterned.into_iter().zip(self.cycles.iter_mut()) {
            let steps = &rule.pattern.sequence;
            let action = event.action.as_str();
            if steps[progress.step].contains(action) {
                progress.current.push((seq, now));
                progress.step += 1;
            } else if steps[0].contains(action) {
                progress.current = vec![(seq, now)];
                progress.step = 1;
            } else {
                continue;
            }
            if progress.step == steps.len() {
                progress.completed.push(std::mem::take(&mut progress.current));
                progress.step = 0;
                let reps = rule.pattern.repetitions.unwrap_or(1) as usize;
                if progress.completed.len() >= reps {
                    let cycles = std::mem::take(&mut progress.completed);
                    let flat: Vec<(u64, u64)> = cycles.into_iter().flatten().collect();
                    out.push(SrlLabel {
                        session_id: self.session_id.clone(),
                        level: LabelLevel::Patterned,
                        process: rule.emit.clone(),
                        evidence: flat.iter().map(|(s, _)| *s).collect(),
                        window: (flat[0].0, seq),
                        rule_id: rule.rule_id.clone(),
                        start_time_ms: flat[0].1,
                    });
                }
            }
        }

        self.seen_actions.insert(event.action.as_str().to_owned());
        self.seen_targets.insert(target_key);
        self.window
            .push_back((seq, now, event.action.as_str().to_owned()));
        while self.window.len() > self.rules.window.max_events {
            self.window.pop_front();
        }
        out
    }

    fn single(&self, rule: &LabelRule, event: &TraceEvent) -> SrlLabel {
        SrlLabel {
            session_id: self.session_id.clone(),
            level: rule.level,
            process: rule.emit.clone(),
            evidence: vec![event.server_seq],
            window: (event.server_seq, event.server_seq),
            rule_id: rule.rule_id.clone(),
            start_time_ms: event.server_time_ms,
        }
    }
}

/// Labels an ordered event stream. A pure function of the rules and events.
pub fn label_stream(rules: &Arc<RuleSet>, session_id: &str, events: &[TraceEvent]) -> Vec<SrlLabel> {
    let mut labeler = Labeler::new(Arc::clone(rules), session_id);
    events.iter().flat_map(|e| labeler.push(e)).collect()
}
