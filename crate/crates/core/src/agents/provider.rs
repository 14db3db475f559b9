use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, RecvTimeoutError};
use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProviderParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ProviderParams {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            max_output_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub model_ref: String,
    pub messages: Vec<Message>,
    pub params: ProviderParams,
}

impl ProviderRequest {
    /// A request whose first message is `system`, followed by `rest`.
    pub fn new(model_ref: impl Into<String>, system: impl Into<String>, rest: Vec<Message>, params: ProviderParams) -> Self {
        let mut messages = Vec::with_capacity(rest.len() + 1);
        messages.push(Message::system(system));
        messages.extend(rest);
        Self {
            model_ref: model_ref.into(),
            messages,
            params,
        }
    }

    /// Exactly one system message, in first position.
    pub fn is_well_formed(&self) -> bool {
        self.messages.first().is_some_and(|m| m.role == Role::System)
            && self.messages.iter().filter(|m| m.role == Role::System).count() == 1
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderReply {
    pub text: String,
    pub finish_reason: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider rate limit reached")]
    RateLimited,
    #[error("provider rejected the request: {0}")]
    ProviderRejected(String),
    #[error("model `{0}` is not configured")]
    Unconfigured(String),
    #[error("transport failure: {0}")]
    Transport(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Timeout | ProviderError::RateLimited | ProviderError::Transport(_))
    }
}

/// A language-model backend.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderReply, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderLimits {
    pub max_concurrent: usize,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for ProviderLimits {
    fn default() -> Self {
        Self {
            max_concurrent: 8,
            timeout_ms: 10_000,
            retries: 1,
        }
    }
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire_until(&self, deadline: Instant) -> bool {
        let mut free = self.free.lock();
        while *free == 0 {
            if self.cv.wait_until(&mut free, deadline).timed_out() && *free == 0 {
                return false;
            }
        }
        *free -= 1;
        true
    }

    fn release(&self) {
        *self.free.lock() += 1;
        self.cv.notify_one();
    }
}

struct Registered {
    provider: Arc<dyn Provider>,
    limits: ProviderLimits,
    permits: Arc<Permits>,
}

/// Model registry with per-provider concurrency limits, timeouts and retry.
#[derive(Default)]
pub struct Gateway {
    providers: RwLock<HashMap<String, Arc<Registered>>>,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, model_ref: impl Into<String>, provider: Arc<dyn Provider>, limits: ProviderLimits) {
        self.providers.write().insert(
            model_ref.into(),
            Arc::new(Registered {
                provider,
                permits: Arc::new(Permits::new(limits.max_concurrent)),
                limits,
            }),
        );
    }

    pub fn is_registered(&self, model_ref: &str) -> bool {
        self.providers.read().contains_key(model_ref)
    }

    pub fn complete(&self, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        if !request.is_well_formed() {
            return Err(ProviderError::ProviderRejected(
                "request must start with exactly one system message".into(),
            ));
        }
        let reg = self
            .providers
            .read()
            .get(&request.model_ref)
            .cloned()
            .ok_or_else(|| ProviderError::Unconfigured(request.model_ref.clone()))?;
        let mut attempt = 0;
        loop {
            match attempt_once(&reg, request) {
                Err(e) if e.is_transient() && attempt < reg.limits.retries => {
                    tracing::debug!(model = %request.model_ref, error = %e, "retrying provider call");
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn attempt_once(reg: &Arc<Registered>, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
    let timeout = Duration::from_millis(reg.limits.timeout_ms);
    let deadline = Instant::now() + timeout;
    if !reg.permits.acquire_until(deadline) {
        return Err(ProviderError::Timeout);
    }
    let (tx, rx) = bounded(1);
    let provider = Arc::clone(&reg.provider);
    let permits = Arc::clone(&reg.permits);
    let req = request.clone();
    // The permit is held until the provider actually returns, even if the
    // caller has given up waiting.
    std::thread::spawn(move || {
        let r = provider.complete(&req);
        permits.release();
        let _ = tx.send(r);
    });
    match rx.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
        Ok(r) => r,
        Err(RecvTimeoutError::Timeout) => Err(ProviderError::Timeout),
        Err(RecvTimeoutError::Disconnected) => Err(ProviderError::Transport("provider thread panicked".into())),
    }
}
