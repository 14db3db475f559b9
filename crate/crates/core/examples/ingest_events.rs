// Durable event ingestion: a session, a batch of trace events, duplicate
// detection and a subscription that starts from a chosen sequence number.
//
//     cargo run -p regulearn --example ingest_events

use std::sync::Arc;

use regulearn::clock::SystemClock;
use regulearn::engine::{Engine, EngineConfig, NewSession};
use regulearn::ingest::AckStatus;
use serde_json::{json, Value};

fn event(i: usize, action: &str) -> Value {
    json!({
        "event_id": format!("demo-{i}"),
        "session_id": "demo",
        "learner_id": "learner-1",
        "experiment_id": "pilot",
        "client_timestamp_ms": 1_700_000_000_000u64 + i as u64,
        "action": action,
        "target": "reading/1",
    })
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = EngineConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..EngineConfig::default()
    };
    let engine = Engine::open(config.clone(), Arc::new(SystemClock))?;
    engine.create_session(NewSession {
        session_id: Some("demo".into()),
        learner_id: "learner-1".into(),
        experiment_id: "pilot".into(),
        group: "PwC".into(),
    })?;

    let batch: Vec<Value> = ["PAGE_NAVIGATION", "NOTE_EDIT", "ESSAY_EDIT", "NOT_AN_ACTION"]
        .iter()
        .enumerate()
        .map(|(i, a)| event(i, a))
        .collect();
    for (raw, result) in batch.iter().zip(engine.ingest_batch(&batch)) {
        match result {
            Ok(ack) => println!("{} -> seq {}", ack.event_id, ack.server_seq),
            Err(e) => println!("{} rejected: {}", raw["event_id"], e.code()),
        }
    }

    // Resending is safe: the original sequence number comes back.
    let again = engine.ingest(&batch[0], "demo")?;
    assert_eq!(again.status, AckStatus::Duplicate);
    println!("resent {} -> seq {} ({:?})", again.event_id, again.server_seq, again.status);

    let mut sub = engine.subscribe_events("demo", 1)?;
    engine.ingest(&event(9, "TIMER"), "demo")?;
    while let Some(e) = sub.try_next() {
        println!("stream: seq {} {}", e.server_seq, e.action.as_str());
    }

    // Everything acknowledged is on disk.
    engine.shutdown();
    drop(engine);
    let reopened = Engine::open(config, Arc::new(SystemClock))?;
    let export = reopened.export("pilot", None)?;
    println!("export after restart: {} lines", export.iter().filter(|&&b| b == b'\n').count());
    reopened.shutdown();
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
