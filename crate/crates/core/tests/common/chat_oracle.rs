//! Chat visibility oracle and a rig with recording agents.

use std::sync::Arc;

use regulearn::agents::{
    AgentConfig, ChatMode, ChatSession, ChatSpec, Gateway, ProviderLimits, ProviderParams, Role, ScriptedProvider,
};
use regulearn::engine::EngineConfig;

use super::Rig;

pub const AGENTS: [&str; 3] = ["tutor", "peer", "critic"];

pub fn agent(id: &str) -> AgentConfig {
    AgentConfig {
        agent_id: id.into(),
        display_name: id.to_uppercase(),
        avatar_ref: String::new(),
        pre_prompt: format!("You are the {id}."),
        model_ref: format!("m-{id}"),
        params: ProviderParams::default(),
    }
}

pub fn spec(mode: ChatMode) -> ChatSpec {
    ChatSpec {
        chat_id: "c1".into(),
        session_id: "s".into(),
        mode,
        agents: AGENTS.iter().map(|a| agent(a)).collect(),
        doc_id: None,
    }
}

/// Rig whose agents answer "<agent> reply <n>" and record their requests.
pub fn chat_rig(dir: Option<&std::path::Path>) -> (Rig, Vec<Arc<ScriptedProvider>>) {
    let config = EngineConfig {
        data_dir: dir.map(|d| d.to_path_buf()),
        chat_context_budget_tokens: None,
        ..EngineConfig::default()
    };
    let gateway = Arc::new(Gateway::new());
    let providers: Vec<Arc<ScriptedProvider>> = AGENTS
        .iter()
        .map(|a| {
            let name = a.to_string();
            let p = Arc::new(ScriptedProvider::with_responder(move |req| {
                Ok(format!("{name} reply {}", req.messages.len()))
            }));
            gateway.register(format!("m-{a}"), p.clone(), ProviderLimits::default());
            p
        })
        .collect();
    let rig = Rig::with(config, gateway);
    (rig, providers)
}

/// A turn as the oracle sees it: the agent thread it belongs to and its text.
#[derive(Clone, Debug)]
pub struct Said {
    pub thread: String,
    pub text: String,
}

pub fn visible(log: &[Said], mode: ChatMode, agent: &str) -> Vec<String> {
    log.iter()
        .filter(|s| mode == ChatMode::Shared || s.thread == agent)
        .map(|s| s.text.clone())
        .collect()
}

/// Plays `turns` (agent indices) through one chat and checks every request
/// context against the visibility oracle, then the event-log replay.
pub fn check_dialogue(shared: bool, turns: &[usize]) {
    let mode = if shared { ChatMode::Shared } else { ChatMode::Separate };
    let (rig, _providers) = chat_rig(None);
    rig.session("s", "l", "x", "g");
    rig.engine.create_chat(spec(mode)).unwrap();
    let mut log: Vec<Said> = Vec::new();
    for (i, &a) in turns.iter().enumerate() {
        let to = AGENTS[a];
        let text = format!("question {i} for {to}");
        let out = rig.engine.send_turn("c1", &text, to).unwrap();
        log.push(Said { thread: to.into(), text: text.clone() });

        let ctx = &out.context;
        assert_eq!(ctx[0].role, Role::System);
        assert_eq!(&ctx[0].text, &format!("You are the {to}."));
        assert_eq!(ctx.iter().filter(|m| m.role == Role::System).count(), 1);

        // Every visible prior turn appears, in order; nothing else does.
        let want = visible(&log, mode, to);
        let got: Vec<&str> = ctx[1..].iter().map(|m| m.text.as_str()).collect();
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!(g.ends_with(w.as_str()), "{} does not carry {}", g, w);
        }
        if mode == ChatMode::Separate {
            for other in log.iter().filter(|s| s.thread != to) {
                assert!(got.iter().all(|g| !g.ends_with(other.text.as_str())));
            }
        }
        log.push(Said { thread: to.into(), text: out.reply_turn.text.clone() });
    }
    let chat = rig.engine.chat("c1").unwrap();
    let events = rig.engine.store().read_session("s", 0).unwrap();
    let rebuilt = ChatSession::replay(spec(mode), &events).unwrap();
    assert_eq!(rebuilt.transcripts, chat.transcripts);
}
