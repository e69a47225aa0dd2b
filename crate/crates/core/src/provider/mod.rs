//! Provider-neutral chat access.

mod cost;
mod http;
mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{Message, Role};

pub use cost::{compute_cost, CostError, CostRecord, Price, PriceTable, TokenUsage};
pub use http::{AnthropicProvider, OpenAiProvider};
pub use mock::{MockCall, MockProvider, MockScript, MockStep};

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProviderError {
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("malformed provider reply: {0}")]
    MalformedProviderReply(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("mock script exhausted for {role} after {served} repl(ies)")]
    ScriptExhausted { role: Role, served: usize },
    #[error("refusing to send an empty message list")]
    EmptyMessages,
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for ChatParams {
    fn default() -> Self {
        ChatParams { temperature: 0.0, max_tokens: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub text: String,
    pub usage: TokenUsage,
    /// Provider-reported or measured duration of the call.
    pub latency_ms: u64,
    /// Fixture annotation naming the failure a scripted step illustrates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_label: Option<String>,
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, role: Role, messages: &[Message], params: &ChatParams) -> Result<ChatReply, ProviderError>;

    /// Model identifier used for price lookups.
    fn model(&self) -> &str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    OpenAi,
    Anthropic,
}

impl std::str::FromStr for ProviderKind {
    type Err = ProviderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(ProviderKind::Mock),
            "openai" | "openai-compatible" | "openai_compat" => Ok(ProviderKind::OpenAi),
            "anthropic" => Ok(ProviderKind::Anthropic),
            other => Err(ProviderError::InvalidConfig(format!("unknown provider `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: ProviderKind,
    pub base_url: String,
    /// Name of the environment variable that holds the API key.
    pub api_key_ref: String,
    pub model_id: String,
    pub temperature: f64,
    pub request_timeout_s: u64,
    pub max_retries_on_transport_error: u32,
    /// First backoff delay; later retries double it.
    pub backoff_base_ms: u64,
}

impl ProviderConfig {
    pub fn new(kind: ProviderKind, model_id: impl Into<String>) -> Self {
        let base_url = match kind {
            ProviderKind::Anthropic => "https://api.anthropic.com",
            ProviderKind::OpenAi => "https://api.openai.com/v1",
            ProviderKind::Mock => "",
        };
        ProviderConfig {
            name: format!("{kind:?}").to_ascii_lowercase(),
            kind,
            base_url: base_url.to_string(),
            api_key_ref: "IRC_API_KEY".to_string(),
            model_id: model_id.into(),
            temperature: 0.0,
            request_timeout_s: 120,
            max_retries_on_transport_error: 3,
            backoff_base_ms: 1000,
        }
    }

    /// Reads `IRC_PROVIDER`, `IRC_MODEL` and `IRC_BASE_URL`. The key itself
    /// stays in the environment and is resolved per request.
    pub fn from_env() -> Result<Self, ProviderError> {
        let kind: ProviderKind = std::env::var("IRC_PROVIDER").unwrap_or_else(|_| "mock".into()).parse()?;
        let model = std::env::var("IRC_MODEL").unwrap_or_else(|_| "mock".into());
        let mut config = ProviderConfig::new(kind, model);
        if let Ok(url) = std::env::var("IRC_BASE_URL") {
            config.base_url = url;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.request_timeout_s == 0 {
            return Err(ProviderError::InvalidConfig("timeout must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidConfig("temperature must be within [0, 2]".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> ChatParams {
        ChatParams { temperature: self.temperature, max_tokens: None }
    }
}
