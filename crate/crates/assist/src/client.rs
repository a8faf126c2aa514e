//! Text-model clients: the offline template stand-in and an
//! OpenAI-compatible chat endpoint.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

/// Environment variables consulted for the API key, in order.
pub const API_KEY_VARS: [&str; 2] = ["TABLEPIPE_API_KEY", "OPENAI_API_KEY"];
/// Overrides the endpoint base URL.
pub const API_BASE_VAR: &str = "TABLEPIPE_API_BASE";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("the offline client does not answer free-form prompts")]
    Offline,
    #[error("no API key: set one of {}", API_KEY_VARS.join(" or "))]
    MissingKey,
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("model endpoint returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("model reply has no message content")]
    EmptyReply,
}

pub trait TextModelClient: Send + Sync {
    fn model(&self) -> &str;

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, ClientError>;

    /// Offline clients never see prompts; callers use the rule-based
    /// fallbacks instead.
    fn is_offline(&self) -> bool {
        false
    }
}

/// Deterministic stand-in used when no model is configured.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineClient;

impl TextModelClient for OfflineClient {
    fn model(&self) -> &str {
        "offline"
    }

    fn complete(&self, _prompt: &str, _temperature: f64) -> Result<String, ClientError> {
        Err(ClientError::Offline)
    }

    fn is_offline(&self) -> bool {
        true
    }
}

/// Chat-completions client for any OpenAI-compatible endpoint.
pub struct ChatClient {
    http: reqwest::blocking::Client,
    base: String,
    model: String,
    api_key: String,
    min_interval: Option<Duration>,
    last_call: Mutex<Option<Instant>>,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl ChatClient {
    pub fn new(base: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        ChatClient {
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("http client builds"),
            base: base.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: api_key.into(),
            min_interval: None,
            last_call: Mutex::new(None),
        }
    }

    /// Key from [`API_KEY_VARS`], base URL from [`API_BASE_VAR`].
    pub fn from_env(model: impl Into<String>) -> Result<Self, ClientError> {
        let key = API_KEY_VARS
            .iter()
            .find_map(|v| std::env::var(v).ok().filter(|k| !k.is_empty()))
            .ok_or(ClientError::MissingKey)?;
        let base = std::env::var(API_BASE_VAR).unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        Ok(ChatClient::new(base, model, key))
    }

    /// Space consecutive requests at least `every` apart.
    pub fn with_rate_limit(mut self, every: Duration) -> Self {
        self.min_interval = Some(every);
        self
    }

    fn throttle(&self) {
        let Some(every) = self.min_interval else {
            return;
        };
        let mut last = self.last_call.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(t) = *last {
            let since = t.elapsed();
            if since < every {
                std::thread::sleep(every - since);
            }
        }
        *last = Some(Instant::now());
    }
}

impl TextModelClient for ChatClient {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, ClientError> {
        self.throttle();
        let body = json!({
            "model": self.model,
            "temperature": temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = self
            .http
            .post(format!("{}/chat/completions", self.base))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ClientError::Status {
                status: status.as_u16(),
                body: resp.text().unwrap_or_default(),
            });
        }
        let reply: ChatReply = resp.json()?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or(ClientError::EmptyReply)
    }
}
