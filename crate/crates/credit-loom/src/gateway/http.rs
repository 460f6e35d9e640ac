//! Blocking client for OpenAI-compatible chat-completions endpoints.

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};

use super::CompletionRequest;

/// Environment variable holding the bearer token for live endpoints.
pub const API_KEY_ENV: &str = "CREDIT_LOOM_API_KEY";

pub struct HttpClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl HttpClient {
    /// Client for `{base_url}/chat/completions`, reading the bearer token
    /// from `CREDIT_LOOM_API_KEY` when set.
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            client: reqwest::blocking::Client::new(),
        }
    }

    /// Single HTTP attempt; retry policy lives in the gateway.
    pub fn complete_once(&self, request: &CompletionRequest) -> Result<String> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut builder = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| Error::NetworkFailure {
            attempts: 1,
            detail: e.to_string(),
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| Error::NetworkFailure {
            attempts: 1,
            detail: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(Error::NetworkFailure {
                attempts: 1,
                detail: format!(
                    "HTTP {status}: {}",
                    text.chars().take(200).collect::<String>()
                ),
            });
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| Error::NetworkFailure {
                attempts: 1,
                detail: format!("bad response body: {e}"),
            })?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::NetworkFailure {
                attempts: 1,
                detail: "response had no choices".into(),
            })
    }
}
