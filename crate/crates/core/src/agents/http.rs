//! OpenAI-compatible chat-completions backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::provider::{Provider, ProviderError, ProviderReply, ProviderRequest, Role, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Model name sent to the remote API.
    pub model: String,
    /// Environment variable holding the bearer credential.
    #[serde(default)]
    pub credential_env: Option<String>,
}

pub struct HttpProvider {
    config: HttpProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn body(&self, request: &ProviderRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                json!({ "role": role, "content": m.text })
            })
            .collect();
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_output_tokens,
        })
    }
}

impl Provider for HttpProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(var) = &self.config.credential_env {
            let key = std::env::var(var)
                .map_err(|_| ProviderError::Unconfigured(format!("credential variable {var} is not set")))?;
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(self.body(request)).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        match status {
            200..=299 => parse_completion(&body),
            429 => Err(ProviderError::RateLimited),
            400..=499 => Err(ProviderError::ProviderRejected(
                body.pointer("/error/message")
                    .and_then(Value::as_str)
                    .unwrap_or("request rejected")
                    .to_owned(),
            )),
            _ => Err(ProviderError::Transport(format!("status {status}"))),
        }
    }
}

fn map_transport(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        other => ProviderError::Transport(other.to_string()),
    }
}

pub fn parse_completion(body: &Value) -> Result<ProviderReply, ProviderError> {
    let choice = body
        .pointer("/choices/0")
        .ok_or_else(|| ProviderError::Transport("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::Transport("choice has no message content".into()))?;
    let usage = Usage {
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0) as u32,
        completion_tokens: body.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0) as u32,
    };
    Ok(ProviderReply {
        text: text.to_owned(),
        finish_reason: choice
            .get("finish_reason")
            .and_then(Value::as_str)
            .unwrap_or("stop")
            .to_owned(),
        usage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_chat_completion_body() {
        let body = json!({
            "choices": [{"message": {"role": "assistant", "content": "Plan first."}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        });
        let r = parse_completion(&body).unwrap();
        assert_eq!(r.text, "Plan first.");
        assert_eq!(r.usage.prompt_tokens, 12);
    }

    #[test]
    fn missing_choices_is_transport_error() {
        assert!(parse_completion(&json!({})).is_err());
    }
}
