//! Learning-condition checks against the shipped statement table.

use serde_json::{json, Value};

use super::Rig;

pub fn statement_file() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/statements.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Each detecting action flips exactly its own flag and statement.
/// Returns the number of statement assertions made.
pub fn condition_flags() -> usize {
    let table = statement_file();
    let keys = ["plan_made", "time_aware", "tools_aware", "material_aware", "requirement_aware", "rubric_aware"];
    let actions = ["SAVE_PLANNER", "TIMER", "TRY_OUT_TOOLS", "PAGE_NAVIGATION", "TASK_REQUIREMENT", "RUBRIC"];
    let mut asserted = 0;
    for (i, action) in actions.iter().enumerate() {
        let rig = Rig::new();
        let s = rig.session("c", "l", "x", "g");
        let before = rig.engine.conditions("c").unwrap();
        for (j, key) in keys.iter().enumerate() {
            assert_eq!(before.statements[j], table["dynamic"][key]["absent"].as_str().unwrap());
        }
        rig.act(&s, action, "t");
        let after = rig.engine.conditions("c").unwrap();
        let flags = serde_json::to_value(&after.dynamic).unwrap();
        for (j, key) in keys.iter().enumerate() {
            assert_eq!(flags[key], json!(i == j), "{action} vs {key}");
            let polarity = if i == j { "present" } else { "absent" };
            assert_eq!(after.statements[j], table["dynamic"][key][polarity].as_str().unwrap());
        }
        asserted += 2;
    }
    asserted
}

/// 12 of 15 items correct; returns the stored score.
pub fn instrument_score() -> f64 {
    let rig = Rig::new();
    rig.session("c", "l", "x", "g");
    let key: Vec<u32> = (0..15).map(|i| i % 4).collect();
    let responses: Vec<Option<u32>> = key
        .iter()
        .enumerate()
        .map(|(i, &k)| if i < 12 { Some(k) } else { Some((k + 1) % 4) })
        .collect();
    let correct = responses.iter().zip(&key).filter(|(r, k)| **r == Some(**k)).count();
    let score = rig.engine.submit_instrument("c", "prior_knowledge", &responses, &key).unwrap();
    assert_eq!(score, correct as f64 / key.len() as f64);
    assert_eq!(score, 0.8);
    let snap = rig.engine.conditions("c").unwrap();
    assert_eq!(snap.static_.prior_knowledge_score, 0.8);
    let table = statement_file();
    assert_eq!(snap.statements[7], table["static"]["prior_knowledge"]["high"].as_str().unwrap());
    assert_eq!(snap.statements[6], table["static"]["strategy_knowledge"]["low"].as_str().unwrap());
    score
}
