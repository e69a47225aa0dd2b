use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use ircopilot_core::provider::{
    AnthropicProvider, ChatProvider, MockProvider, MockScript, OpenAiProvider, ProviderConfig, ProviderError, ProviderKind,
};

use crate::{Result, ServiceError};

/// How a session obtains its chat provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Mock { script: MockScript },
    Live { config: ProviderConfig },
}

impl ProviderSpec {
    pub fn mock_file(path: &Path) -> Result<Self> {
        Ok(ProviderSpec::Mock { script: MockScript::load(path)? })
    }

    /// Live provider of `kind`, with model and base URL overridable from
    /// the environment.
    pub fn live(kind: ProviderKind, model: Option<&str>) -> Result<Self> {
        if kind == ProviderKind::Mock {
            return Err(ServiceError::InvalidInput("the mock provider needs a script".into()));
        }
        let env_model = std::env::var("IRC_MODEL").ok();
        let model = model.map(str::to_string).or(env_model).ok_or_else(|| {
            ServiceError::InvalidInput("a model is required (pass one or set IRC_MODEL)".into())
        })?;
        let mut config = ProviderConfig::new(kind, model);
        if let Ok(url) = std::env::var("IRC_BASE_URL") {
            config.base_url = url;
        }
        config.validate()?;
        Ok(ProviderSpec::Live { config })
    }

    pub fn label(&self) -> &'static str {
        match self {
            ProviderSpec::Mock { .. } => "mock",
            ProviderSpec::Live { config } => match config.kind {
                ProviderKind::OpenAi => "openai",
                ProviderKind::Anthropic => "anthropic",
                ProviderKind::Mock => "mock",
            },
        }
    }

    pub fn build(&self) -> Result<Arc<dyn ChatProvider>, ProviderError> {
        Ok(match self {
            ProviderSpec::Mock { script } => Arc::new(MockProvider::new(script.clone())),
            ProviderSpec::Live { config } => match config.kind {
                ProviderKind::OpenAi => Arc::new(OpenAiProvider::new(config.clone())?),
                ProviderKind::Anthropic => Arc::new(AnthropicProvider::new(config.clone())?),
                ProviderKind::Mock => return Err(ProviderError::InvalidConfig("mock provider needs a script".into())),
            },
        })
    }
}
