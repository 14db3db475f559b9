// Turns a learner's clickstream into self-regulated learning labels,
// learning-condition statements and per-interval aggregates.
//
//     cargo run -p regulearn --example label_session

use std::sync::Arc;

use regulearn::clock::ManualClock;
use regulearn::engine::{Engine, EngineConfig, NewSession};
use regulearn::model::Phase;
use serde_json::json;

const START: u64 = 1_700_000_000_000;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let clock = Arc::new(ManualClock::new(START));
    let engine = Engine::open(EngineConfig::default(), clock.clone())?;
    engine.create_session(NewSession {
        session_id: Some("s1".into()),
        learner_id: "learner-1".into(),
        experiment_id: "pilot".into(),
        group: "PwC".into(),
    })?;
    engine.advance_phase("s1", Phase::MainTask)?;

    let script = [
        (5, "TASK_REQUIREMENT", "instructions"),
        (20, "RUBRIC", "rubric"),
        (30, "SAVE_PLANNER", "planner"),
        (40, "PAGE_NAVIGATION", "reading/1"),
        (90, "NOTE_EDIT", "notes"),
        (60, "ESSAY_EDIT", "essay"),
        (120, "ESSAY_EDIT", "essay"),
        (45, "RUBRIC", "rubric"),
        (30, "ESSAY_EDIT", "essay"),
    ];
    for (i, (gap_s, action, target)) in script.iter().enumerate() {
        clock.advance(gap_s * 1000);
        let raw = json!({
            "event_id": format!("e{i}"),
            "session_id": "s1",
            "learner_id": "learner-1",
            "experiment_id": "pilot",
            "client_timestamp_ms": clock.advance(0),
            "action": action,
            "target": target,
        });
        engine.ingest(&raw, "s1")?;
    }

    for l in engine.labels("s1")? {
        println!("{:<12?} {:<24} evidence {:?}", l.level, l.process, l.evidence);
    }
    let snapshot = engine.conditions("s1")?;
    println!("\nconditions:");
    for s in &snapshot.statements {
        println!("  - {s}");
    }

    // Interval 0 covers the first seven minutes of task time.
    clock.set(START + 7 * 60 * 1000 + 1);
    let agg = engine.intervals("s1", 0)?;
    println!("\ninterval 0 processes: {:?}", agg.process_counts);
    for (action, share) in &agg.action_time_proportions {
        println!("  {action:<18} {:.3}", share);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
