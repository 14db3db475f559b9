// Time-based scaffolds: rules fire when a learner has not yet shown a
// behaviour by a task-time deadline, the message text comes from a model
// prompt filled with the learner's current conditions, and the client
// acknowledges delivery.
//
//     cargo run -p regulearn --example timed_scaffolds

use std::sync::Arc;

use regulearn::agents::{Gateway, ProviderLimits, ScriptedProvider};
use regulearn::clock::ManualClock;
use regulearn::engine::{Engine, EngineConfig, NewSession};
use regulearn::model::Phase;
use regulearn::scaffold::{replay_prompt, DeliveryStatus};

const START: u64 = 1_700_000_000_000;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let clock = Arc::new(ManualClock::new(START));
    let gateway = Arc::new(Gateway::new());
    // Any chat-completion provider works here; a scripted one keeps the
    // example offline.
    let model = Arc::new(ScriptedProvider::with_replies([
        "Take a minute to read the task description and the rubric.",
        "Have you checked the task requirements yet?",
    ]));
    gateway.register("scaffold", model.clone(), ProviderLimits::default());
    let engine = Engine::open_with_gateway(EngineConfig::default(), clock.clone(), gateway)?;

    for (sid, group) in [("personal", "PwC"), ("generic", "Po"), ("control", "CN")] {
        engine.create_session(NewSession {
            session_id: Some(sid.into()),
            learner_id: format!("learner-{sid}"),
            experiment_id: "pilot".into(),
            group: group.into(),
        })?;
        engine.advance_phase(sid, Phase::MainTask)?;
    }

    // The control group has no instruction panel and never gets scaffolds.
    // Once the two scripted replies are used up the rule's template text
    // stands in, flagged as degraded.
    let mut stream = engine.subscribe_scaffolds("personal", None)?;
    for minute in [1, 2, 14] {
        clock.set(START + minute * 60_000);
        for m in engine.tick() {
            let note = if m.degraded { " (template)" } else { "" };
            println!("[{minute:>2} min] {} <- {}: {}{note}", m.session_id, m.rule_id, m.scaffold_text);
        }
    }

    let first = stream.try_next().expect("personalized scaffold");
    println!("\nprompt sent for `{}`:\n{}\n", first.rule_id, first.rendered_prompt);
    assert_eq!(replay_prompt(&first)?, first.rendered_prompt);
    let shown = engine.ack_scaffold(&first.message_id, DeliveryStatus::Shown)?;
    let acked = engine.ack_scaffold(&shown.message_id, DeliveryStatus::Acknowledged)?;
    println!("{} is now {:?}", acked.message_id, acked.delivery_status);
    println!("model calls: {}", model.call_count());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
