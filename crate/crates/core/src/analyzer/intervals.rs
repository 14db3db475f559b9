//! Task-clock interval aggregates and action-time accounting.
//!
//! Each event owns the time until the next event of its session, capped at
//! the idle cap. The last event owns nothing. Spans are disjoint, so the
//! accounted time inside an interval never exceeds its length.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::labeler::SrlLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalConfig {
    pub interval_length_ms: u64,
    pub idle_cap_ms: u64,
}

impl Default for IntervalConfig {
    fn default() -> Self {
        Self {
            interval_length_ms: 420_000,
            idle_cap_ms: 60_000,
        }
    }
}

/// The slice of an event the time accounting needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMeta {
    pub server_seq: u64,
    pub server_time_ms: u64,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpan {
    pub action: String,
    /// Server time.
    pub start_ms: u64,
    pub duration_ms: u64,
}

pub fn action_spans(events: &[EventMeta], idle_cap_ms: u64) -> Vec<ActionSpan> {
    events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let gap = events
                .get(i + 1)
                .map(|n| n.server_time_ms.saturating_sub(e.server_time_ms))
                .unwrap_or(0);
            ActionSpan {
                action: e.action.clone(),
                start_ms: e.server_time_ms,
                duration_ms: gap.min(idle_cap_ms),
            }
        })
        .collect()
}

/// Accounted milliseconds per action over the whole session.
pub fn action_time_totals(events: &[EventMeta], idle_cap_ms: u64) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for s in action_spans(events, idle_cap_ms) {
        if s.duration_ms > 0 {
            *out.entry(s.action).or_insert(0) += s.duration_ms;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalAggregate {
    pub session_id: String,
    pub interval_index: u64,
    pub interval_length_ms: u64,
    pub process_counts: BTreeMap<String, u64>,
    pub action_time_proportions: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IntervalError {
    #[error("interval {index} ends at task time {ends_at_ms} ms; task clock reads {now_ms:?}")]
    IntervalNotElapsed {
        index: u64,
        ends_at_ms: u64,
        now_ms: Option<i64>,
    },
}

/// Aggregates interval `k` = `[k*L, (k+1)*L)` on the task clock.
/// `now_ms` is the current server time.
pub fn aggregate_interval(
    session_id: &str,
    events: &[EventMeta],
    labels: &[SrlLabel],
    task_origin_ms: Option<u64>,
    k: u64,
    config: &IntervalConfig,
    now_ms: u64,
) -> Result<IntervalAggregate, IntervalError> {
    let len = config.interval_length_ms;
    let lo = k * len;
    let hi = lo + len;
    let origin = match task_origin_ms {
        Some(o) if now_ms >= o && now_ms - o >= hi => o,
        _ => {
            return Err(IntervalError::IntervalNotElapsed {
                index: k,
                ends_at_ms: hi,
                now_ms: task_origin_ms.map(|o| now_ms as i64 - o as i64),
            })
        }
    };
    let (abs_lo, abs_hi) = (origin + lo, origin + hi);

    let mut ms: BTreeMap<String, u64> = BTreeMap::new();
    for s in action_spans(events, config.idle_cap_ms) {
        let start = s.start_ms.max(abs_lo);
        let end = (s.start_ms + s.duration_ms).min(abs_hi);
        if end > start {
            *ms.entry(s.action).or_insert(0) += end - start;
        }
    }
    let mut process_counts = BTreeMap::new();
    for l in labels {
        if l.start_time_ms >= abs_lo && l.start_time_ms < abs_hi {
            *process_counts.entry(l.process.clone()).or_insert(0) += 1;
        }
    }
    Ok(IntervalAggregate {
        session_id: session_id.to_owned(),
        interval_index: k,
        interval_length_ms: len,
        process_counts,
        action_time_proportions: ms
            .into_iter()
            .map(|(a, t)| (a, t as f64 / len as f64))
            .collect(),
    })
}
