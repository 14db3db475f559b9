//! Deterministic offline provider driven by a FIFO script.

use std::collections::VecDeque;
use std::time::Duration;

use parking_lot::Mutex;

use super::provider::{Provider, ProviderError, ProviderReply, ProviderRequest, Usage};

pub type Responder = Box<dyn Fn(&ProviderRequest) -> Result<String, ProviderError> + Send + Sync>;

#[derive(Debug, Clone)]
pub enum ScriptStep {
    Reply(String),
    Fail(ProviderError),
    Delayed(Duration, Box<ScriptStep>),
}

/// Replies from the script in order; once it runs dry, falls back to the
/// responder if one is set, otherwise rejects. Every request is recorded.
#[derive(Default)]
pub struct ScriptedProvider {
    script: Mutex<VecDeque<ScriptStep>>,
    responder: Option<Responder>,
    seen: Mutex<Vec<ProviderRequest>>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_replies<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let p = Self::new();
        for r in replies {
            p.push_reply(r);
        }
        p
    }

    pub fn with_responder(
        responder: impl Fn(&ProviderRequest) -> Result<String, ProviderError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            responder: Some(Box::new(responder)),
            ..Self::default()
        }
    }

    pub fn push(&self, step: ScriptStep) {
        self.script.lock().push_back(step);
    }

    pub fn push_reply(&self, text: impl Into<String>) {
        self.push(ScriptStep::Reply(text.into()));
    }

    pub fn push_failure(&self, error: ProviderError) {
        self.push(ScriptStep::Fail(error));
    }

    pub fn push_delayed(&self, delay: Duration, text: impl Into<String>) {
        self.push(ScriptStep::Delayed(delay, Box::new(ScriptStep::Reply(text.into()))));
    }

    pub fn requests(&self) -> Vec<ProviderRequest> {
        self.seen.lock().clone()
    }

    pub fn call_count(&self) -> usize {
        self.seen.lock().len()
    }

    fn run(step: ScriptStep) -> Result<String, ProviderError> {
        match step {
            ScriptStep::Reply(t) => Ok(t),
            ScriptStep::Fail(e) => Err(e),
            ScriptStep::Delayed(d, inner) => {
                std::thread::sleep(d);
                Self::run(*inner)
            }
        }
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        self.seen.lock().push(request.clone());
        let step = self.script.lock().pop_front();
        let text = match step {
            Some(step) => Self::run(step)?,
            None => match &self.responder {
                Some(f) => f(request)?,
                None => return Err(ProviderError::ProviderRejected("script exhausted".into())),
            },
        };
        let prompt_chars: usize = request.messages.iter().map(|m| m.text.chars().count()).sum();
        Ok(ProviderReply {
            usage: Usage {
                prompt_tokens: estimate_tokens_from_chars(prompt_chars),
                completion_tokens: estimate_tokens_from_chars(text.chars().count()),
            },
            text,
            finish_reason: "stop".into(),
        })
    }
}

/// Rough token estimate: four characters per token, rounded up.
pub fn estimate_tokens_from_chars(chars: usize) -> u32 {
    chars.div_ceil(4) as u32
}
