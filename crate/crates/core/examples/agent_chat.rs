// Multi-agent chat. In shared mode every agent sees the whole conversation
// with speakers named; in separate mode each agent only sees its own thread.
//
//     cargo run -p regulearn --example agent_chat

use std::sync::Arc;

use regulearn::agents::{
    AgentConfig, ChatMode, ChatSpec, Gateway, ProviderLimits, ProviderParams, ScriptedProvider,
};
use regulearn::clock::SystemClock;
use regulearn::engine::{Engine, EngineConfig, NewSession};

fn agent(id: &str, role: &str) -> AgentConfig {
    AgentConfig {
        agent_id: id.into(),
        display_name: id.to_uppercase(),
        avatar_ref: String::new(),
        pre_prompt: format!("You are a {role} helping a student write an essay."),
        model_ref: format!("model-{id}"),
        params: ProviderParams::default(),
    }
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let gateway = Arc::new(Gateway::new());
    for id in ["tutor", "peer"] {
        let name = id.to_owned();
        let provider = ScriptedProvider::with_responder(move |req| {
            Ok(format!("{name} saw {} messages", req.messages.len()))
        });
        gateway.register(format!("model-{id}"), Arc::new(provider), ProviderLimits::default());
    }
    let engine = Engine::open_with_gateway(EngineConfig::default(), Arc::new(SystemClock), gateway)?;
    engine.create_session(NewSession {
        session_id: Some("s".into()),
        learner_id: "learner-1".into(),
        experiment_id: "pilot".into(),
        group: "PwC".into(),
    })?;

    for (chat_id, mode) in [("group", ChatMode::Shared), ("private", ChatMode::Separate)] {
        engine.create_chat(ChatSpec {
            chat_id: chat_id.into(),
            session_id: "s".into(),
            mode,
            agents: vec![agent("tutor", "writing tutor"), agent("peer", "fellow student")],
            doc_id: None,
        })?;
        engine.send_turn(chat_id, "How should I start?", "tutor")?;
        let out = engine.send_turn(chat_id, "What would you write?", "peer")?;
        println!("{mode:?} mode, context sent to the peer:");
        for m in &out.context {
            println!("  {:?}: {}", m.role, m.text);
        }
        println!("  reply: {}\n", out.reply_turn.text);
    }

    let chat = engine.chat("private")?;
    for (thread, turns) in &chat.transcripts {
        println!("private thread `{thread}` holds {} turns", turns.len());
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
