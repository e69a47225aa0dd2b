use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatParams, ChatProvider, ChatReply, ProviderError, TokenUsage};
use crate::session::{estimate_tokens, Message, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockStep {
    pub role: Role,
    pub reply: String,
    #[serde(default)]
    pub input_tokens: Option<u64>,
    #[serde(default)]
    pub output_tokens: Option<u64>,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_label: Option<String>,
}

impl MockStep {
    pub fn new(role: Role, reply: impl Into<String>) -> Self {
        MockStep { role, reply: reply.into(), input_tokens: None, output_tokens: None, latency_ms: 0, failure_label: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default = "default_model")]
    pub model: String,
    pub steps: Vec<MockStep>,
}

fn default_model() -> String {
    "mock".to_string()
}

impl MockScript {
    pub fn new(steps: Vec<MockStep>) -> Self {
        MockScript { model: default_model(), steps }
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        serde_json::from_str(text).map_err(|e| ProviderError::InvalidConfig(format!("mock fixture: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidConfig(format!("mock fixture {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// One served request, kept for test assertions.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub role: Role,
    pub messages: Vec<Message>,
}

#[derive(Debug, Default)]
struct MockState {
    queues: BTreeMap<Role, VecDeque<MockStep>>,
    served: BTreeMap<Role, usize>,
    calls: Vec<MockCall>,
}

/// Serves scripted replies from one queue per role.
#[derive(Debug)]
pub struct MockProvider {
    model: String,
    state: Mutex<MockState>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        let mut state = MockState::default();
        for step in script.steps {
            state.queues.entry(step.role).or_default().push_back(step);
        }
        MockProvider { model: script.model, state: Mutex::new(state) }
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::new(MockScript::load(path)?))
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.state.lock().expect("mock state").calls.clone()
    }

    pub fn remaining(&self, role: Role) -> usize {
        self.state.lock().expect("mock state").queues.get(&role).map_or(0, VecDeque::len)
    }
}

impl ChatProvider for MockProvider {
    fn chat(&self, role: Role, messages: &[Message], _params: &ChatParams) -> Result<ChatReply, ProviderError> {
        if messages.is_empty() {
            return Err(ProviderError::EmptyMessages);
        }
        let mut state = self.state.lock().expect("mock state");
        let served = state.served.get(&role).copied().unwrap_or(0);
        let step = state
            .queues
            .get_mut(&role)
            .and_then(VecDeque::pop_front)
            .ok_or(ProviderError::ScriptExhausted { role, served })?;
        *state.served.entry(role).or_default() += 1;
        state.calls.push(MockCall { role, messages: messages.to_vec() });
        let prompt_tokens: usize = messages.iter().map(|m| m.token_count).sum();
        Ok(ChatReply {
            usage: TokenUsage::new(
                step.input_tokens.unwrap_or(prompt_tokens as u64),
                step.output_tokens.unwrap_or(estimate_tokens(&step.reply) as u64),
            ),
            text: step.reply,
            latency_ms: step.latency_ms,
            failure_label: step.failure_label,
        })
    }

    fn model(&self) -> &str {
        &self.model
    }
}
