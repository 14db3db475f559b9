//! Provider-agnostic model access and multi-agent chat.

mod chat;
mod http;
mod provider;
mod scripted;

pub use chat::{AgentConfig, ChatError, ChatHub, ChatMode, ChatSession, ChatSpec, Turn, TurnOutcome, LEARNER};
pub use http::{parse_completion, HttpProvider, HttpProviderConfig};
pub use provider::{
    Gateway, Message, Provider, ProviderError, ProviderLimits, ProviderParams, ProviderReply, ProviderRequest, Role,
    Usage,
};
pub use scripted::{estimate_tokens_from_chars, ScriptStep, ScriptedProvider};
