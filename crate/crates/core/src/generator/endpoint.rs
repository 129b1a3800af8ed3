use std::thread::sleep;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::policy::GenerationParams;

/// Chat-completion endpoint settings. The API key is read from the named
/// environment variable at call time and never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_concurrency: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            model: "default".into(),
            api_key_env: None,
            timeout_secs: 60,
            max_retries: 2,
            backoff_ms: 500,
            max_concurrency: 4,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedBody(String),
}

impl EndpointError {
    fn retryable(&self) -> bool {
        match self {
            EndpointError::Transport(_) => true,
            EndpointError::Status { status, .. } => *status == 429 || *status >= 500,
            EndpointError::MalformedBody(_) => false,
        }
    }
}

pub fn chat_request_body(config: &EndpointConfig, prompt: &str, params: &GenerationParams) -> Value {
    json!({
        "model": config.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_length,
    })
}

pub fn parse_chat_response(body: &str) -> Result<String, EndpointError> {
    let v: Value = serde_json::from_str(body).map_err(|e| EndpointError::MalformedBody(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| EndpointError::MalformedBody("missing choices[0].message.content".into()))
}

fn post_once(agent: &ureq::Agent, config: &EndpointConfig, body: &str) -> Result<String, EndpointError> {
    let url = format!("{}/v1/chat/completions", config.base_url.trim_end_matches('/'));
    let mut req = agent.post(&url).header("Content-Type", "application/json");
    if let Some(key) = config.api_key_env.as_deref().and_then(|name| std::env::var(name).ok()) {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send(body).map_err(|e| EndpointError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| EndpointError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(EndpointError::Status { status, body: text });
    }
    parse_chat_response(&text)
}

/// Sends `prompt` as a single user message and returns the first choice's
/// content. Transport failures, 429 and 5xx are retried with exponential
/// backoff.
pub fn external_generate(config: &EndpointConfig, prompt: &str, params: &GenerationParams) -> Result<String, EndpointError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into();
    let body = chat_request_body(config, prompt, params).to_string();
    let mut attempt = 0;
    loop {
        match post_once(&agent, config, &body) {
            Err(e) if e.retryable() && attempt < config.max_retries => {
                sleep(Duration::from_millis(config.backoff_ms << attempt));
                attempt += 1;
            }
            other => return other,
        }
    }
}
