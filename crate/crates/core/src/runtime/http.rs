//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde_json::{json, Value};

use super::backend::{
    Backend, BackendDescriptor, BackendError, BackendErrorKind, BackendKind, Completion, FinishReason, ToolCallRequest,
};
use super::request::ModelRequest;
use crate::spec::LIVE_TURN_TIMEOUT;

pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";

#[derive(Debug, Clone)]
pub struct HttpBackend {
    base: String,
    key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
    max_retries: u32,
    backoff: Duration,
}

impl HttpBackend {
    pub fn new(base: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Self {
        Self::with_timeout(base, key, model, LIVE_TURN_TIMEOUT)
    }

    pub fn with_timeout(
        base: impl Into<String>,
        key: Option<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            key,
            model: model.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("http client"),
            max_retries: 3,
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads `AGENTLOOM_API_BASE`, `AGENTLOOM_API_KEY` and `AGENTLOOM_MODEL`.
    pub fn from_env() -> Result<Self, BackendError> {
        let key = std::env::var("AGENTLOOM_API_KEY").ok().filter(|k| !k.is_empty());
        let base = std::env::var("AGENTLOOM_API_BASE").unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        if key.is_none() && base == DEFAULT_API_BASE {
            return Err(BackendError::new(
                BackendErrorKind::Transport,
                "AGENTLOOM_API_KEY is not set",
            ));
        }
        let model = std::env::var("AGENTLOOM_MODEL").unwrap_or_else(|_| DEFAULT_MODEL.to_string());
        Ok(Self::new(base, key, model))
    }

    pub fn with_backoff(mut self, max_retries: u32, backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff = backoff;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }
}

/// Request body for one exchange. The agent's own earlier outputs are the
/// assistant turns; everything else is user content tagged with its speaker.
pub fn request_body(request: &ModelRequest, default_model: &str) -> Value {
    let own = &request.key.caller;
    let mut messages = vec![json!({"role": "system", "content": request.system})];
    for entry in &request.dialogue {
        if &entry.speaker == own {
            messages.push(json!({"role": "assistant", "content": entry.text}));
        } else {
            messages.push(json!({"role": "user", "content": format!("[{}] {}", entry.speaker, entry.text)}));
        }
    }
    let mut body = json!({
        "model": request.model.as_deref().unwrap_or(default_model),
        "messages": messages,
        "temperature": request.decode.temperature,
        "max_tokens": request.decode.max_output_tokens,
    });
    if let Some(seed) = request.decode.seed {
        body["seed"] = json!(seed);
    }
    if !request.tool_menu.is_empty() {
        body["tools"] = request
            .tool_menu
            .iter()
            .map(|t| {
                json!({"type": "function", "function": {
                    "name": t.name, "description": t.description, "parameters": t.parameters
                }})
            })
            .collect();
    }
    body
}

/// Maps a chat-completions response to a [`Completion`].
pub fn parse_response(body: &Value) -> Result<Completion, BackendError> {
    let protocol = |m: &str| BackendError::new(BackendErrorKind::Protocol, m);
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| protocol("response has no choices"))?;
    let message = choice.get("message").ok_or_else(|| protocol("choice has no message"))?;
    let text = message
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let tool_calls = message
        .get("tool_calls")
        .and_then(Value::as_array)
        .map(|calls| {
            calls
                .iter()
                .map(|c| {
                    let f = c
                        .get("function")
                        .ok_or_else(|| protocol("tool call without function"))?;
                    Ok(ToolCallRequest {
                        name: f.get("name").and_then(Value::as_str).unwrap_or_default().to_string(),
                        arguments: match f.get("arguments") {
                            Some(Value::String(s)) => s.clone(),
                            Some(other) => other.to_string(),
                            None => String::new(),
                        },
                    })
                })
                .collect::<Result<Vec<_>, BackendError>>()
        })
        .transpose()?
        .unwrap_or_default();
    let finish = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("tool_calls") => FinishReason::ToolCalls,
        Some("length") => FinishReason::Length,
        Some("stop") | None => {
            if tool_calls.is_empty() {
                FinishReason::Stop
            } else {
                FinishReason::ToolCalls
            }
        }
        Some(_) => FinishReason::Error,
    };
    Ok(Completion {
        text,
        tool_calls,
        finish,
    })
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Live,
            model: Some(self.model.clone()),
            script_digest: None,
        }
    }

    fn complete(&self, request: &ModelRequest) -> Result<Completion, BackendError> {
        let body = request_body(request, &self.model);
        let url = format!("{}/chat/completions", self.base);
        let mut attempt = 0;
        loop {
            let mut req = self.client.post(&url).json(&body);
            if let Some(key) = &self.key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) if e.is_timeout() => return Err(BackendError::new(BackendErrorKind::Timeout, e.to_string())),
                Err(e) => return Err(BackendError::new(BackendErrorKind::Transport, e.to_string())),
            };
            let status = resp.status().as_u16();
            if status == 429 || status >= 500 {
                if attempt < self.max_retries {
                    attempt += 1;
                    let wait = resp
                        .headers()
                        .get("retry-after")
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.parse::<u64>().ok())
                        .map(Duration::from_secs)
                        .unwrap_or(self.backoff * 2u32.pow(attempt - 1));
                    std::thread::sleep(wait);
                    continue;
                }
                let kind = if status == 429 {
                    BackendErrorKind::RateLimited
                } else {
                    BackendErrorKind::Transport
                };
                return Err(BackendError::new(
                    kind,
                    format!("status {status} after {attempt} retries"),
                ));
            }
            if !(200..300).contains(&status) {
                let text = resp.text().unwrap_or_default();
                return Err(BackendError::new(
                    BackendErrorKind::Protocol,
                    format!("status {status}: {}", text.chars().take(300).collect::<String>()),
                ));
            }
            let value: Value = resp.json().map_err(|e| {
                let kind = if e.is_timeout() {
                    BackendErrorKind::Timeout
                } else {
                    BackendErrorKind::Protocol
                };
                BackendError::new(kind, e.to_string())
            })?;
            return parse_response(&value);
        }
    }
}
