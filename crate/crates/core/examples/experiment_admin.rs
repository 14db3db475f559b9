// Researcher workflow: configure an experiment with per-group tools, watch
// a disabled tool being refused, then read statistics, time proportions
// and a reimportable export.
//
//     cargo run -p regulearn --example experiment_admin

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use regulearn::admin::{ExperimentConfig, TaskConfig, TOOLS};
use regulearn::clock::ManualClock;
use regulearn::engine::{Engine, EngineConfig, NewSession};
use serde_json::json;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let clock = Arc::new(ManualClock::new(1_700_000_000_000));
    let engine = Engine::open(EngineConfig::default(), clock.clone())?;
    let all: BTreeSet<String> = TOOLS.iter().map(|t| t.to_string()).collect();
    engine.configure_experiment(ExperimentConfig {
        experiment_id: "fall-study".into(),
        name: "Fall essay study".into(),
        owner: "lab".into(),
        groups: vec!["PwC".into(), "CN".into()],
        toolset: BTreeMap::from([("PwC".to_owned(), all), ("CN".to_owned(), BTreeSet::new())]),
        task: TaskConfig {
            duration_ms: 45 * 60_000,
            instruction_doc: "Write about AI in education.".into(),
            rubric_id: None,
            source_set_id: None,
        },
        scaffold_rule_file: None,
        chat_config: None,
    })?;

    for (i, group) in ["PwC", "CN", "PwC"].iter().enumerate() {
        let sid = format!("s{i}");
        engine.create_session(NewSession {
            session_id: Some(sid.clone()),
            learner_id: format!("learner-{i}"),
            experiment_id: "fall-study".into(),
            group: group.to_string(),
        })?;
        for (j, action) in ["PAGE_NAVIGATION", "NOTE_EDIT", "ESSAY_EDIT", "ESSAY_EDIT"].iter().enumerate() {
            clock.advance(20_000 + 10_000 * j as u64);
            engine.ingest(
                &json!({
                    "event_id": format!("{sid}-{j}"), "session_id": sid, "learner_id": format!("learner-{i}"),
                    "experiment_id": "fall-study", "client_timestamp_ms": 0, "action": action, "target": "t",
                }),
                &sid,
            )?;
        }
    }

    match engine.timer("s1") {
        Err(e) => println!("control group timer: {} ({})", e.code(), e),
        Ok(_) => unreachable!("CN has no tools"),
    }
    println!("search 'stdy': {:?}", engine.search("stdy").iter().map(|h| &h.name).collect::<Vec<_>>());
    println!("stats: {}", serde_json::to_string_pretty(&engine.stats("fall-study")?)?);
    println!("s0 time shares: {:?}", engine.proportions("s0")?);

    let export = engine.export("fall-study", None)?;
    let fresh = Engine::open(EngineConfig::default(), clock)?;
    let report = fresh.import(&export)?;
    println!("reimported {} events into a fresh engine", report.imported);
    assert_eq!(fresh.stats("fall-study")?, engine.stats("fall-study")?);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
