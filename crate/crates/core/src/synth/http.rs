//! Chat-completion client for OpenAI-compatible HTTP endpoints.
//!
//! Request body: `{"model", "messages": [{"role", "content"}], "temperature",
//! "max_tokens"}`. Response: `choices[0].message.content` and
//! `choices[0].finish_reason` (`stop` or `length`). The key is sent both as a
//! bearer token and as an `api-key` header.

use std::time::Duration;

use serde_json::{json, Value};

use super::{CompletionProvider, CompletionRequest, CompletionResult, FinishReason, ProviderError};
use crate::model::Role;

/// Environment variable read for the provider key unless configured otherwise.
pub const DEFAULT_API_KEY_ENV: &str = "CURATE_API_KEY";

pub struct HttpProvider {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: String,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, endpoint: endpoint.into(), model: model.into(), api_key: api_key.into() }
    }

    /// Reads the key from `env_var`; a missing or empty variable is an auth error.
    pub fn from_env(endpoint: &str, model: &str, env_var: &str, timeout: Duration) -> Result<Self, ProviderError> {
        match std::env::var(env_var) {
            Ok(key) if !key.trim().is_empty() => Ok(Self::new(endpoint, model, key, timeout)),
            _ => Err(ProviderError::Auth(format!("environment variable {env_var} is not set"))),
        }
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::Human => "user",
                    Role::Assistant => "assistant",
                };
                json!({"role": role, "content": m.text})
            })
            .collect();
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }
}

fn transport(e: impl std::fmt::Display) -> ProviderError {
    ProviderError::Transport(e.to_string())
}

/// Maps a response body to a result. Unknown finish reasons (such as content
/// filtering) count as errors.
pub fn parse_response(body: &Value) -> Result<CompletionResult, ProviderError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ProviderError::Transport("response has no choices".into()))?;
    let text = choice.pointer("/message/content").and_then(Value::as_str).unwrap_or("").to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") => FinishReason::Complete,
        Some("length") => FinishReason::Length,
        _ => FinishReason::Error,
    };
    let mut result = CompletionResult::new(text, finish_reason);
    for key in ["id", "model", "usage"] {
        if let Some(v) = body.get(key) {
            result.provider_meta.insert(key.to_string(), v.clone());
        }
    }
    if let Some(v) = choice.get("finish_reason") {
        result.provider_meta.insert("finish_reason".to_string(), v.clone());
    }
    Ok(result)
}

impl CompletionProvider for HttpProvider {
    fn complete(&self, _id: &str, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        let body = serde_json::to_string(&self.request_body(request)).expect("request serializes");
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json")
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("api-key", &self.api_key)
            .send(body.as_str())
            .map_err(|e| match e {
                ureq::Error::BadUri(u) => ProviderError::InvalidRequest(format!("bad endpoint {u}")),
                other => transport(other),
            })?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(transport)?;
        match status {
            200..=299 => {
                let value: Value = serde_json::from_str(&text).map_err(transport)?;
                parse_response(&value)
            }
            429 => Err(ProviderError::RateLimited(text)),
            401 | 403 => Err(ProviderError::Auth(format!("status {status}"))),
            408 | 500..=599 => Err(ProviderError::Transport(format!("status {status}: {text}"))),
            _ => Err(ProviderError::InvalidRequest(format!("status {status}: {text}"))),
        }
    }
}
