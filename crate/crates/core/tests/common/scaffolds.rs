//! Scaffold timing, concurrency and prompt checks.

use std::sync::{Arc, Barrier};

use regulearn::analyzer::StatementTable;
use regulearn::model::Phase;
use regulearn::scaffold::{replay_prompt, ScaffoldMessage};

use super::{Rig, T0};

pub const TICK: u64 = 10_000;
pub const INSTRUCTIONS: &str = "instructions.within_14_minutes";
pub const ORIENTATION: &str = "orientation.within_2_minutes";

/// Starts the task for every listed session at T0 and returns the origin.
pub fn start(rig: &Rig, ids: &[String], group: &str) -> u64 {
    for id in ids {
        rig.session(id, &format!("l-{id}"), "x", group);
        rig.engine.advance_phase(id, Phase::MainTask).unwrap();
    }
    T0
}

pub fn fired(messages: &[ScaffoldMessage], session: &str, rule: &str) -> bool {
    messages.iter().any(|m| m.session_id == session && m.rule_id == rule)
}



pub fn issue_one(rig: &Rig, session: &str) -> ScaffoldMessage {
    rig.clock.set(T0 + 120_000);
    rig.engine
        .tick()
        .into_iter()
        .find(|m| m.session_id == session)
        .expect("orientation scaffold")
}

/// Tick (10 s each) at which the 14-minute rule first fires for the session
/// that never reviews the requirement. 84 sessions that do review never fire.
pub fn instruction_first_fire() -> Option<u64> {
    let rig = Rig::new();
    // Session j reviews the requirement at tick j; session "none" never does.
    let ids: Vec<String> = (0..84).map(|j| format!("j{j}")).chain(["none".to_owned()]).collect();
    let origin = start(&rig, &ids, "PwC");
    let mut first_fire = None;
    for tick in 0..=90u64 {
        rig.clock.set(origin + tick * TICK);
        if tick < 84 {
            let s = rig.engine.get_session(&format!("j{tick}")).unwrap();
            rig.act(&s, "TASK_REQUIREMENT", "instructions");
        }
        let issued = rig.engine.tick();
        for j in 0..84 {
            assert!(!fired(&issued, &format!("j{j}"), INSTRUCTIONS), "j{j} fired at tick {tick}");
        }
        if fired(&issued, "none", INSTRUCTIONS) {
            assert!(first_fire.is_none(), "one-shot rule fired twice");
            first_fire = Some(tick);
        }
    }
    first_fire
}

/// Same as [`instruction_first_fire`] for the 2-minute orientation rule.
pub fn orientation_first_fire() -> Option<u64> {
    let rig = Rig::new();
    let ids: Vec<String> = (0..12).map(|j| format!("o{j}")).chain(["none".to_owned()]).collect();
    let origin = start(&rig, &ids, "Po");
    let mut first_fire = None;
    for tick in 0..=20u64 {
        rig.clock.set(origin + tick * TICK);
        if tick < 12 {
            let s = rig.engine.get_session(&format!("o{tick}")).unwrap();
            let action = if tick % 2 == 0 { "RUBRIC" } else { "TASK_REQUIREMENT" };
            rig.act(&s, action, "r");
        }
        let issued = rig.engine.tick();
        for j in 0..12 {
            assert!(!fired(&issued, &format!("o{j}"), ORIENTATION));
        }
        if fired(&issued, "none", ORIENTATION) {
            assert!(first_fire.is_none());
            first_fire = Some(tick);
        }
    }
    first_fire
}

/// 100 threads tick at once for a due session; returns messages issued.
pub fn racing_ticks() -> usize {
    let rig = Rig::new();
    start(&rig, &["race".to_owned()], "PwC");
    // Orientation is present, so only the 14-minute rule is due.
    let s = rig.engine.get_session("race").unwrap();
    rig.act(&s, "RUBRIC", "rubric");
    rig.clock.set(T0 + 900_000);
    let barrier = Arc::new(Barrier::new(100));
    let handles: Vec<_> = (0..100)
        .map(|_| {
            let engine = Arc::clone(&rig.engine);
            let barrier = Arc::clone(&barrier);
            std::thread::spawn(move || {
                barrier.wait();
                engine.tick().len()
            })
        })
        .collect();
    let total: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
    assert_eq!(rig.engine.scaffold_messages("race").unwrap().len(), total);
    total
}

/// Statement counts found in a PwC prompt and in a Po prompt.
pub fn statement_embedding() -> (usize, usize) {
    let rig = Rig::new();
    start(&rig, &["pwc".to_owned()], "PwC");
    let rig2 = Rig::new();
    start(&rig2, &["po".to_owned()], "Po");

    let pwc = issue_one(&rig, "pwc");
    let po = issue_one(&rig2, "po");
    let table = StatementTable::default_table();
    let all: Vec<String> = table
        .dynamic
        .values()
        .flat_map(|p| [p.present.clone(), p.absent.clone()])
        .chain(table.static_.values().flat_map(|l| [l.high.clone(), l.low.clone()]))
        .collect();
    let in_pwc = all.iter().filter(|s| pwc.rendered_prompt.contains(s.as_str())).count();
    for s in &pwc.provenance.inputs.snapshot.statements {
        assert!(pwc.rendered_prompt.contains(s.as_str()));
    }
    let in_po = all.iter().filter(|s| po.rendered_prompt.contains(s.as_str())).count();
    (in_pwc, in_po)
}

/// Renders twice, replays, restarts and replays again; panics on mismatch.
pub fn render_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (id, prompt) = {
        let rig = Rig::on_disk(dir.path());
        start(&rig, &["r".to_owned()], "PwC");
        let m = issue_one(&rig, "r");
        let inputs = &m.provenance.inputs;
        assert_eq!(inputs.render_prompt().unwrap(), inputs.render_prompt().unwrap());
        assert_eq!(replay_prompt(&m).unwrap(), m.rendered_prompt);
        let session = rig.engine.get_session("r").unwrap();
        let again = rig
            .engine
            .scaffolds()
            .prompt_inputs(&inputs.rule, inputs.snapshot.clone(), session.group(), "x")
            .unwrap();
        assert_eq!(again.render_prompt().unwrap(), m.rendered_prompt);
        rig.engine.shutdown();
        (m.message_id, m.rendered_prompt)
    };
    let rig = Rig::on_disk(dir.path());
    let stored = rig.engine.scaffold_messages("r").unwrap();
    assert_eq!(stored.len(), 1);
    assert_eq!(stored[0].message_id, id);
    assert_eq!(replay_prompt(&stored[0]).unwrap(), prompt);
    // Issued rules stay issued across restarts.
    rig.clock.set(T0 + 130_000);
    assert!(rig.engine.tick().iter().all(|m| m.rule_id != ORIENTATION));
}
