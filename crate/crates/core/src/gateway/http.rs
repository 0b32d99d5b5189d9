use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendError, BackendReply, ChatBackend, ChatRequest, FinishReason};

pub const API_KEY_VAR: &str = "LLM_API_KEY";
pub const ENDPOINT_VAR: &str = "LLM_ENDPOINT_URL";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            agent,
            endpoint: endpoint.into(),
            api_key: api_key.into(),
        }
    }

    /// Reads the key from `LLM_API_KEY`; `LLM_ENDPOINT_URL` overrides `endpoint`.
    pub fn from_env(endpoint: &str) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_VAR)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::MissingCredentials(API_KEY_VAR.to_string()))?;
        let endpoint = std::env::var(ENDPOINT_VAR).unwrap_or_else(|_| endpoint.to_string());
        Ok(HttpBackend::new(endpoint, key, Duration::from_secs(600)))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

pub(crate) fn request_body(request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": request.model,
        "messages": request.messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    });
    if let Some(seed) = request.seed {
        body["seed"] = json!(seed);
    }
    body
}

pub(crate) fn parse_reply(body: &Value) -> Result<BackendReply, BackendError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Fatal("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Fatal("response has no message content".into()))?;
    Ok(BackendReply {
        text: text.to_string(),
        finish_reason: FinishReason::from_api(choice.get("finish_reason").and_then(Value::as_str)),
    })
}

fn classify(status: u16, body: String) -> BackendError {
    let detail = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    match status {
        401 | 403 => BackendError::Auth(detail),
        429 => BackendError::RateLimited(detail),
        408 | 500..=599 => BackendError::Transient(detail),
        _ => BackendError::Fatal(detail),
    }
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, BackendError> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request_body(request))
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(classify(status, text));
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal(format!("response is not JSON: {e}")))?;
        parse_reply(&body)
    }
}
