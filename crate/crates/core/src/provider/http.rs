use std::time::{Duration, Instant};

use reqwest::blocking::{Client, RequestBuilder};
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{ChatParams, ChatProvider, ChatReply, ProviderConfig, ProviderError, TokenUsage};
use crate::session::{estimate_tokens, Author, Message, Role};

const ANTHROPIC_VERSION: &str = "2023-06-01";
const ANTHROPIC_DEFAULT_MAX_TOKENS: u32 = 4096;

fn resolve_key(config: &ProviderConfig) -> Result<String, ProviderError> {
    match std::env::var(&config.api_key_ref) {
        Ok(key) if !key.trim().is_empty() => Ok(key),
        _ => Err(ProviderError::AuthFailure(format!("environment variable {} is not set", config.api_key_ref))),
    }
}

fn build_client(config: &ProviderConfig) -> Result<Client, ProviderError> {
    config.validate()?;
    Client::builder()
        .timeout(Duration::from_secs(config.request_timeout_s))
        .build()
        .map_err(|e| ProviderError::InvalidConfig(e.to_string()))
}

enum Attempt {
    Done(Value),
    Retry(ProviderError),
    Fail(ProviderError),
}

fn attempt(request: RequestBuilder, attempts: u32) -> Attempt {
    let response = match request.send() {
        Ok(r) => r,
        Err(e) if e.is_timeout() => return Attempt::Retry(ProviderError::Timeout { attempts }),
        Err(e) => return Attempt::Retry(ProviderError::Transport(e.to_string())),
    };
    let status = response.status();
    let body = response.text().unwrap_or_default();
    match status {
        s if s.is_success() => match serde_json::from_str(&body) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fail(ProviderError::MalformedProviderReply(format!("{e}: {}", snippet(&body)))),
        },
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Attempt::Fail(ProviderError::AuthFailure(snippet(&body))),
        StatusCode::TOO_MANY_REQUESTS => Attempt::Retry(ProviderError::RateLimited { attempts }),
        StatusCode::REQUEST_TIMEOUT | StatusCode::GATEWAY_TIMEOUT => Attempt::Retry(ProviderError::Timeout { attempts }),
        s if s.is_server_error() => Attempt::Retry(ProviderError::Transport(format!("HTTP {s}: {}", snippet(&body)))),
        s => Attempt::Fail(ProviderError::Transport(format!("HTTP {s}: {}", snippet(&body)))),
    }
}

fn snippet(body: &str) -> String {
    body.chars().take(300).collect()
}

/// Sends with exponential backoff on transient failures.
fn send_with_retries(config: &ProviderConfig, build: impl Fn() -> RequestBuilder) -> Result<(Value, u64), ProviderError> {
    let started = Instant::now();
    let mut delay = Duration::from_millis(config.backoff_base_ms);
    let mut tries = 0;
    loop {
        tries += 1;
        match attempt(build(), tries) {
            Attempt::Done(v) => return Ok((v, started.elapsed().as_millis() as u64)),
            Attempt::Fail(e) => return Err(e),
            Attempt::Retry(e) if tries > config.max_retries_on_transport_error => {
                return Err(match e {
                    ProviderError::Timeout { .. } => ProviderError::Timeout { attempts: tries },
                    ProviderError::RateLimited { .. } => ProviderError::RateLimited { attempts: tries },
                    other => other,
                })
            }
            Attempt::Retry(e) => {
                tracing::warn!(error = %e, attempt = tries, "provider call failed, backing off");
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
    }
}

fn usage_or_estimate(input: Option<u64>, output: Option<u64>, messages: &[Message], text: &str) -> TokenUsage {
    let prompt: usize = messages.iter().map(|m| m.token_count).sum();
    TokenUsage::new(input.unwrap_or(prompt as u64), output.unwrap_or(estimate_tokens(text) as u64))
}

fn author_str(author: Author) -> &'static str {
    match author {
        Author::System => "system",
        Author::User => "user",
        Author::Assistant => "assistant",
    }
}

/// OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug)]
pub struct OpenAiProvider {
    config: ProviderConfig,
    client: Client,
}

impl OpenAiProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        let client = build_client(&config)?;
        Ok(OpenAiProvider { config, client })
    }
}

impl ChatProvider for OpenAiProvider {
    fn chat(&self, _role: Role, messages: &[Message], params: &ChatParams) -> Result<ChatReply, ProviderError> {
        if messages.is_empty() {
            return Err(ProviderError::EmptyMessages);
        }
        let key = resolve_key(&self.config)?;
        let mut body = json!({
            "model": self.config.model_id,
            "temperature": params.temperature,
            "messages": messages.iter().map(|m| json!({"role": author_str(m.author), "content": m.content})).collect::<Vec<_>>(),
        });
        if let Some(max) = params.max_tokens {
            body["max_tokens"] = json!(max);
        }
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let (value, latency_ms) =
            send_with_retries(&self.config, || self.client.post(&url).bearer_auth(&key).json(&body))?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::MalformedProviderReply("missing choices[0].message.content".into()))?
            .to_string();
        let usage = usage_or_estimate(
            value["usage"]["prompt_tokens"].as_u64(),
            value["usage"]["completion_tokens"].as_u64(),
            messages,
            &text,
        );
        Ok(ChatReply { text, usage, latency_ms, failure_label: None })
    }

    fn model(&self) -> &str {
        &self.config.model_id
    }
}

/// Anthropic Messages API.
#[derive(Debug)]
pub struct AnthropicProvider {
    config: ProviderConfig,
    client: Client,
}

impl AnthropicProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        let client = build_client(&config)?;
        Ok(AnthropicProvider { config, client })
    }
}

impl ChatProvider for AnthropicProvider {
    fn chat(&self, _role: Role, messages: &[Message], params: &ChatParams) -> Result<ChatReply, ProviderError> {
        if messages.is_empty() {
            return Err(ProviderError::EmptyMessages);
        }
        let key = resolve_key(&self.config)?;
        let system: Vec<&str> =
            messages.iter().filter(|m| m.author == Author::System).map(|m| m.content.as_str()).collect();
        let turns: Vec<Value> = messages
            .iter()
            .filter(|m| m.author != Author::System)
            .map(|m| json!({"role": author_str(m.author), "content": m.content}))
            .collect();
        if turns.is_empty() {
            return Err(ProviderError::EmptyMessages);
        }
        let mut body = json!({
            "model": self.config.model_id,
            "max_tokens": params.max_tokens.unwrap_or(ANTHROPIC_DEFAULT_MAX_TOKENS),
            "temperature": params.temperature.min(1.0),
            "messages": turns,
        });
        if !system.is_empty() {
            body["system"] = json!(system.join("\n\n"));
        }
        let url = format!("{}/v1/messages", self.config.base_url.trim_end_matches('/'));
        let (value, latency_ms) = send_with_retries(&self.config, || {
            self.client
                .post(&url)
                .header("x-api-key", &key)
                .header("anthropic-version", ANTHROPIC_VERSION)
                .json(&body)
        })?;
        let blocks = value["content"]
            .as_array()
            .ok_or_else(|| ProviderError::MalformedProviderReply("missing content array".into()))?;
        let text: String = blocks.iter().filter_map(|b| b["text"].as_str()).collect::<Vec<_>>().join("");
        let usage = usage_or_estimate(
            value["usage"]["input_tokens"].as_u64(),
            value["usage"]["output_tokens"].as_u64(),
            messages,
            &text,
        );
        Ok(ChatReply { text, usage, latency_ms, failure_label: None })
    }

    fn model(&self) -> &str {
        &self.config.model_id
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::super::ProviderKind;
    use super::*;

    /// Answers each connection with the next canned `(status, body)` pair.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}"), hits)
    }

    fn config(kind: ProviderKind, base: &str, key_var: &str) -> ProviderConfig {
        let mut c = ProviderConfig::new(kind, "test-model");
        c.base_url = base.to_string();
        c.api_key_ref = key_var.to_string();
        c.backoff_base_ms = 1;
        c
    }

    #[test]
    fn missing_key_fails_before_network() {
        let (base, hits) = serve(vec![]);
        let p = OpenAiProvider::new(config(ProviderKind::OpenAi, &base, "IRC_TEST_UNSET_KEY_VAR")).unwrap();
        let err = p.chat(Role::Planner, &[Message::user("hi")], &ChatParams::default()).unwrap_err();
        assert!(matches!(err, ProviderError::AuthFailure(_)));
        assert_eq!(hits.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn openai_reply_and_retry_on_server_error() {
        std::env::set_var("IRC_TEST_KEY_OPENAI", "k");
        let ok = r#"{"choices":[{"message":{"content":"hello"}}],"usage":{"prompt_tokens":7,"completion_tokens":2}}"#;
        let (base, hits) = serve(vec![(500, "{}".into()), (200, ok.into())]);
        let p = OpenAiProvider::new(config(ProviderKind::OpenAi, &base, "IRC_TEST_KEY_OPENAI")).unwrap();
        let reply = p.chat(Role::Planner, &[Message::user("hi")], &ChatParams::default()).unwrap();
        assert_eq!(reply.text, "hello");
        assert_eq!(reply.usage, TokenUsage::new(7, 2));
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn anthropic_usage_falls_back_to_estimate() {
        std::env::set_var("IRC_TEST_KEY_ANTHROPIC", "k");
        let ok = r#"{"content":[{"type":"text","text":"abcdefgh"}]}"#;
        let (base, _) = serve(vec![(200, ok.into())]);
        let p = AnthropicProvider::new(config(ProviderKind::Anthropic, &base, "IRC_TEST_KEY_ANTHROPIC")).unwrap();
        let msgs = [Message::system("sys"), Message::user("12345678")];
        let reply = p.chat(Role::Analyst, &msgs, &ChatParams::default()).unwrap();
        assert_eq!(reply.text, "abcdefgh");
        assert_eq!(reply.usage, TokenUsage::new(3, 2));
    }

    #[test]
    fn rate_limit_surfaces_after_retries() {
        std::env::set_var("IRC_TEST_KEY_RATE", "k");
        let (base, hits) = serve(vec![(429, "{}".into()); 4]);
        let p = OpenAiProvider::new(config(ProviderKind::OpenAi, &base, "IRC_TEST_KEY_RATE")).unwrap();
        let err = p.chat(Role::Planner, &[Message::user("hi")], &ChatParams::default()).unwrap_err();
        assert_eq!(err, ProviderError::RateLimited { attempts: 4 });
        assert_eq!(hits.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn unauthorized_is_not_retried() {
        std::env::set_var("IRC_TEST_KEY_AUTH", "k");
        let (base, hits) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
        let p = OpenAiProvider::new(config(ProviderKind::OpenAi, &base, "IRC_TEST_KEY_AUTH")).unwrap();
        assert!(matches!(
            p.chat(Role::Planner, &[Message::user("hi")], &ChatParams::default()),
            Err(ProviderError::AuthFailure(_))
        ));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }
}
