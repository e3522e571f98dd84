//! Chat-completions over HTTP.

use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// POSTs a JSON body and returns the decoded JSON answer, mapping HTTP
/// failures onto [`BackendError`].
pub fn post_json(client: &Client, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, BackendError> {
    let mut request = client.post(url).json(body);
    if let Some(key) = api_key {
        request = request.bearer_auth(key);
    }
    let response = request.send().map_err(|e| BackendError::Transport(e.to_string()))?;
    let status = response.status();
    let text = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
    match status {
        s if s.is_success() => serde_json::from_str(&text).map_err(|e| {
            log::error!("undecodable response from {url}: {text}");
            BackendError::Protocol {
                message: format!("response is not JSON: {e}"),
                raw: text,
            }
        }),
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Err(BackendError::Auth(format!("{status}: {text}"))),
        StatusCode::TOO_MANY_REQUESTS => Err(BackendError::RateLimited(text)),
        s => Err(BackendError::Http {
            status: s.as_u16(),
            body: text,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    base_url: String,
    api_key: Option<String>,
    client: Client,
}

impl HttpChatBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpChatBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            client,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

impl ChatBackend for HttpChatBackend {
    fn id(&self) -> String {
        format!("http:{}", self.base_url)
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(max) = request.max_output_tokens {
            body["max_tokens"] = json!(max);
        }
        let started = Instant::now();
        let raw = post_json(&self.client, &self.endpoint(), self.api_key.as_deref(), &body)?;
        let latency = started.elapsed();

        let protocol = |message: &str| BackendError::Protocol {
            message: message.to_string(),
            raw: raw.to_string(),
        };
        let text = raw
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| protocol("missing choices[0].message.content"))?
            .to_string();
        let usage = raw.get("usage").and_then(|u| {
            Some(Usage {
                prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
                completion_tokens: u.get("completion_tokens")?.as_u64()?,
            })
        });
        let model = raw
            .get("model")
            .and_then(Value::as_str)
            .unwrap_or(&request.model)
            .to_string();
        Ok(ChatResponse {
            text,
            usage,
            model,
            latency,
        })
    }
}
