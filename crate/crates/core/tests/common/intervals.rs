//! Interval aggregates checked against an independent Python script.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::{Command, Stdio};

use serde_json::{json, Value};

use super::{load_fixture, Rig, T0};

pub fn fixture_export() -> Vec<u8> {
    let mut out = Vec::new();
    for e in load_fixture().events {
        out.extend(regulearn::model::canonical_serialize(&e));
        out.push(b'\n');
    }
    out
}

pub fn python_oracle(doc: &Value) -> Value {
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/oracles/intervals.py");
    let mut child = Command::new("python3")
        .arg(script)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .expect("python3 available");
    child.stdin.take().unwrap().write_all(doc.to_string().as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Compares engine aggregates for intervals `ks` with the script's.
pub fn check_against_oracle(rig: &Rig, session: &str, export: &[u8], ks: &[u64]) {
    let events: Vec<Value> = export
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice::<Value>(l).unwrap())
        .filter(|v| v["session_id"] == session)
        .collect();
    let origin = events
        .iter()
        .find(|e| e["action"] == "PHASE_CHANGE" && matches!(e["payload"]["phase"].as_str(), Some("main_task" | "post_task")))
        .map(|e| e["server_time_ms"].as_u64().unwrap())
        .unwrap();
    let labels: Vec<Value> = rig
        .engine
        .labels(session)
        .unwrap()
        .iter()
        .map(|l| json!([l.process, l.start_time_ms]))
        .collect();
    let doc = json!({
        "origin": origin,
        "length": 420_000,
        "idle_cap": 60_000,
        "intervals": ks,
        "events": events.iter().map(|e| json!([e["server_time_ms"], e["action"]])).collect::<Vec<_>>(),
        "labels": labels,
    });
    let oracle = python_oracle(&doc);
    for &k in ks {
        let agg = rig.engine.intervals(session, k).unwrap();
        let want = &oracle[k.to_string()];
        let want_props: BTreeMap<String, f64> = serde_json::from_value(want["proportions"].clone()).unwrap();
        let want_counts: BTreeMap<String, u64> = serde_json::from_value(want["counts"].clone()).unwrap();
        assert_eq!(agg.process_counts, want_counts, "counts of interval {k}");
        assert_eq!(
            agg.action_time_proportions.keys().collect::<Vec<_>>(),
            want_props.keys().collect::<Vec<_>>()
        );
        for (a, p) in &want_props {
            assert!((agg.action_time_proportions[a] - p).abs() <= 1e-9, "{a} in interval {k}");
        }
    }
}

pub const ACTIONS: &[&str] = &[
    "PAGE_NAVIGATION",
    "NOTE_EDIT",
    "ESSAY_EDIT",
    "TIMER",
    "RUBRIC",
    "TASK_REQUIREMENT",
    "SELF_TEST",
    "ANNOTATION_CREATE",
    "CHAT_SEND",
];

/// Plays `(action index, gap)` steps after the task starts and compares
/// every elapsed interval with the script. Returns intervals checked.
pub fn random_session_vs_oracle(steps: &[(usize, u64)]) -> usize {
    let rig = Rig::new();
    let s = rig.session("p", "l", "x", "g");
    rig.clock.advance(7_000);
    rig.engine.advance_phase("p", regulearn::model::Phase::MainTask).unwrap();
    for (a, gap) in steps {
        rig.clock.advance(*gap);
        rig.act(&s, ACTIONS[*a], "t");
    }
    let origin = T0 + 7_000;
    let elapsed = rig.clock.advance(1) - origin;
    let ks: Vec<u64> = (0..elapsed / 420_000).collect();
    let checked = ks.len();
    if !ks.is_empty() {
        let export = rig.engine.export("x", None).unwrap();
        check_against_oracle(&rig, "p", &export, &ks);
    }
    let mut sum = 0.0;
    for k in ks {
        let agg = rig.engine.intervals("p", k).unwrap();
        let t: f64 = agg.action_time_proportions.values().sum();
        assert!(t <= 1.0 + 1e-12);
        sum += t;
    }
    assert!(sum.is_finite());
    checked
}
