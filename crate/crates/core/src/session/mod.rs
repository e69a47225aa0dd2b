//! Role-scoped conversation transcripts.

mod prompts;
mod tokens;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use prompts::{PromptLibrary, ScenarioKind};
pub use tokens::{estimate_tokens, CharEstimate, TokenCounter};

pub const DEFAULT_CONTEXT_BUDGET: usize = 24_000;

/// Label of the placeholder message that stands in for elided turns.
pub const ELISION_NOTE: &str = "[earlier turns elided to fit the context budget; the current IRT is restated below]";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("message content must not be empty")]
    EmptyContent,
    #[error("unknown snapshot `{0}`")]
    UnknownSnapshot(String),
    #[error("budget {budget} is smaller than the system prompt ({system} tokens)")]
    BudgetTooSmall { budget: usize, system: usize },
    #[error("no template for {role} / {kind}")]
    MissingTemplate { role: Role, kind: ScenarioKind },
    #[error("template {name} references unknown placeholder `{placeholder}`")]
    MissingPlaceholder { name: String, placeholder: String },
    #[error("cannot read templates: {0}")]
    TemplateIo(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Planner,
    Generator,
    Reflector,
    Analyst,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Planner, Role::Generator, Role::Reflector, Role::Analyst];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Planner => "planner",
            Role::Generator => "generator",
            Role::Reflector => "reflector",
            Role::Analyst => "analyst",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown role `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Author {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub author: Author,
    pub content: String,
    pub token_count: usize,
}

impl Message {
    pub fn new(author: Author, content: impl Into<String>) -> Self {
        Self::counted(author, content, &CharEstimate)
    }

    pub fn counted(author: Author, content: impl Into<String>, counter: &dyn TokenCounter) -> Self {
        let content = content.into();
        let token_count = counter.count(&content);
        Message { author, content, token_count }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Author::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Author::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Author::Assistant, content)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub role: Role,
    messages: Vec<Message>,
    snapshots: BTreeMap<String, usize>,
}

impl Transcript {
    pub fn new(role: Role) -> Self {
        Transcript { role, messages: Vec::new(), snapshots: BTreeMap::new() }
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn snapshots(&self) -> &BTreeMap<String, usize> {
        &self.snapshots
    }

    pub fn total_tokens(&self) -> usize {
        self.messages.iter().map(|m| m.token_count).sum()
    }

    pub fn push(&mut self, message: Message) -> Result<(), SessionError> {
        if message.content.trim().is_empty() {
            return Err(SessionError::EmptyContent);
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn append_exchange(&mut self, user: &str, assistant: &str) -> Result<(), SessionError> {
        if user.trim().is_empty() || assistant.trim().is_empty() {
            return Err(SessionError::EmptyContent);
        }
        self.messages.push(Message::user(user));
        self.messages.push(Message::assistant(assistant));
        Ok(())
    }

    /// Records the current length under `label`, replacing any earlier
    /// snapshot with the same label.
    pub fn take_snapshot(&mut self, label: &str) {
        self.snapshots.insert(label.to_string(), self.messages.len());
    }

    /// Truncates back to the snapshot. Snapshots taken after it are dropped.
    pub fn restore_snapshot(&mut self, label: &str) -> Result<(), SessionError> {
        let at = *self.snapshots.get(label).ok_or_else(|| SessionError::UnknownSnapshot(label.to_string()))?;
        self.messages.truncate(at);
        self.snapshots.retain(|_, idx| *idx <= at);
        Ok(())
    }

    /// Messages from the snapshot index onward.
    pub fn since(&self, label: &str) -> Result<&[Message], SessionError> {
        let at = *self.snapshots.get(label).ok_or_else(|| SessionError::UnknownSnapshot(label.to_string()))?;
        Ok(&self.messages[at.min(self.messages.len())..])
    }

    pub fn system_messages(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(|m| m.author == Author::System)
    }

    /// A copy that fits `budget`: every system message, then as many of the
    /// most recent turns as fit, with one placeholder standing in for the rest.
    pub fn trim_context(&self, budget: usize) -> Result<Transcript, SessionError> {
        let system: usize = self.system_messages().map(|m| m.token_count).sum();
        if budget <= system {
            return Err(SessionError::BudgetTooSmall { budget, system });
        }
        if self.total_tokens() <= budget {
            return Ok(self.clone());
        }
        let note = Message::user(ELISION_NOTE);
        let mut room = budget - system;
        let use_note = room > note.token_count;
        if use_note {
            room -= note.token_count;
        }
        let mut keep = vec![false; self.messages.len()];
        for (idx, msg) in self.messages.iter().enumerate().rev() {
            if msg.author == Author::System {
                keep[idx] = true;
            } else if msg.token_count <= room {
                room -= msg.token_count;
                keep[idx] = true;
            } else {
                break;
            }
        }
        for (idx, msg) in self.messages.iter().enumerate() {
            if msg.author == Author::System {
                keep[idx] = true;
            }
        }
        let mut out = Transcript::new(self.role);
        let mut noted = false;
        for (idx, msg) in self.messages.iter().enumerate() {
            if keep[idx] {
                out.messages.push(msg.clone());
            } else if use_note && !noted {
                out.messages.push(note.clone());
                noted = true;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exchanges_append_in_order() {
        let mut t = Transcript::new(Role::Planner);
        t.append_exchange("u", "a").unwrap();
        assert_eq!(t.len(), 2);
        for i in 0..9 {
            t.append_exchange(&format!("u{i}"), &format!("a{i}")).unwrap();
        }
        assert_eq!(t.len(), 20);
        assert_eq!(t.messages()[18].content, "u8");
        assert_eq!(t.messages()[19].author, Author::Assistant);
    }

    #[test]
    fn empty_user_content_is_rejected() {
        let mut t = Transcript::new(Role::Generator);
        assert_eq!(t.append_exchange("", "reply"), Err(SessionError::EmptyContent));
        assert!(t.is_empty());
    }

    #[test]
    fn restore_truncates_and_is_idempotent() {
        let mut t = Transcript::new(Role::Planner);
        t.append_exchange("a", "b").unwrap();
        t.append_exchange("c", "d").unwrap();
        t.take_snapshot("pre");
        let before = t.clone();
        t.append_exchange("e", "f").unwrap();
        t.restore_snapshot("pre").unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t, before);
        t.restore_snapshot("pre").unwrap();
        assert_eq!(t, before);
        assert_eq!(t.restore_snapshot("nope"), Err(SessionError::UnknownSnapshot("nope".into())));
    }

    #[test]
    fn trim_is_noop_under_budget() {
        let mut t = Transcript::new(Role::Analyst);
        t.push(Message::system("sys")).unwrap();
        t.append_exchange("hello", "world").unwrap();
        assert_eq!(t.trim_context(1000).unwrap(), t);
    }

    #[test]
    fn trim_drops_oldest_turns_first() {
        let mut t = Transcript::new(Role::Planner);
        t.push(Message::system("s".repeat(40))).unwrap();
        for i in 0..10 {
            t.append_exchange(&format!("{i}{}", "u".repeat(39)), &format!("{i}{}", "a".repeat(39))).unwrap();
        }
        let budget = t.total_tokens() / 2;
        let trimmed = t.trim_context(budget).unwrap();
        assert!(trimmed.total_tokens() <= budget);
        assert_eq!(trimmed.messages()[0], t.messages()[0]);
        assert_eq!(trimmed.messages()[1].content, ELISION_NOTE);
        assert_eq!(trimmed.messages().last(), t.messages().last());
    }

    #[test]
    fn trim_rejects_tiny_budget() {
        let mut t = Transcript::new(Role::Reflector);
        t.push(Message::system("x".repeat(400))).unwrap();
        assert!(matches!(t.trim_context(10), Err(SessionError::BudgetTooSmall { .. })));
    }
}
