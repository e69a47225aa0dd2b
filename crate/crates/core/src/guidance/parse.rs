use std::sync::LazyLock;

use regex::Regex;

use super::extract::scan;
use super::{CommandBlock, Guidance, GuidanceError, Step, Strategy};
use crate::irt::{NodeId, OsTag};

static HEADING: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^[#*\s]*(?:strategy|method|approach|option)\s*(\d+)\s*(?:\*\*)?\s*[:.)\-–]?\s*(.*)$").unwrap()
});
static NUMBERED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d+)[.)]\s+(.*)$").unwrap());
static BULLET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[-*•]\s+(.*)$").unwrap());
static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new("\u{1}(\\d+)\u{1}").unwrap());

struct Draft {
    description: String,
    steps: Vec<Step>,
}

impl Draft {
    fn new(description: impl Into<String>) -> Self {
        Draft { description: description.into(), steps: Vec::new() }
    }

    fn step(&mut self, instruction: String) -> &mut Step {
        self.steps.push(Step { instruction, commands: Vec::new() });
        self.steps.last_mut().expect("just pushed")
    }

    fn current(&mut self) -> &mut Step {
        if self.steps.is_empty() {
            return self.step(String::new());
        }
        self.steps.last_mut().expect("non-empty")
    }

    fn finish(mut self) -> Option<Strategy> {
        self.steps.retain(|s| !s.instruction.is_empty() || !s.commands.is_empty());
        for step in &mut self.steps {
            if step.instruction.is_empty() {
                step.instruction = step.commands.first().map(|c| c.command.lines().next().unwrap_or("").to_string()).unwrap_or_default();
            }
        }
        if self.steps.is_empty() {
            return None;
        }
        if self.description.is_empty() {
            self.description = self.steps[0].instruction.clone();
        }
        Some(Strategy { description: self.description, steps: self.steps })
    }
}

fn clean(text: &str) -> String {
    let stripped = PLACEHOLDER.replace_all(text, "");
    let s = stripped.replace("**", "").replace('`', "");
    s.split_whitespace().collect::<Vec<_>>().join(" ").trim_end_matches(':').trim().to_string()
}

fn append(target: &mut String, text: &str) {
    let text = clean(text);
    if text.is_empty() {
        return;
    }
    if !target.is_empty() {
        target.push(' ');
    }
    target.push_str(&text);
}

/// Splits a Generator reply into strategies. Explicit `Strategy N` headings
/// win; without them each numbered item becomes its own strategy.
pub fn parse_guidance(text: &str, task: NodeId, os_tag: OsTag) -> Result<Guidance, GuidanceError> {
    let spans = scan(text)?;
    let mut masked = String::with_capacity(text.len());
    let mut cursor = 0;
    for (i, span) in spans.iter().enumerate() {
        masked.push_str(&text[cursor..span.range.start]);
        masked.push_str(&format!("\u{1}{i}\u{1}"));
        cursor = span.range.end;
    }
    masked.push_str(&text[cursor..]);
    let command = |i: usize| CommandBlock { command: spans[i].command.clone(), os_tag };

    let has_headings = masked.lines().any(|l| HEADING.is_match(l.trim()));
    let mut drafts: Vec<Draft> = Vec::new();
    let mut preamble = Draft::new("");
    for line in masked.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if has_headings {
            if let Some(caps) = HEADING.captures(trimmed) {
                drafts.push(Draft::new(clean(&caps[2])));
                continue;
            }
        }
        let numbered = NUMBERED.captures(trimmed).map(|c| c[2].to_string());
        let bullet = BULLET.captures(trimmed).map(|c| c[1].to_string());
        if !has_headings && numbered.is_some() {
            drafts.push(Draft::new(""));
        }
        let target = match drafts.last_mut() {
            Some(d) => d,
            None => &mut preamble,
        };
        let step = match (numbered, bullet) {
            (Some(body), _) => target.step(clean(&body)),
            (None, Some(body)) if has_headings => target.step(clean(&body)),
            _ => {
                let s = target.current();
                append(&mut s.instruction, trimmed);
                s
            }
        };
        for caps in PLACEHOLDER.captures_iter(trimmed) {
            step.commands.push(command(caps[1].parse().expect("placeholder index")));
        }
    }

    let preamble_has_commands = preamble.steps.iter().any(|s| !s.commands.is_empty());
    let mut strategies: Vec<Strategy> = Vec::new();
    if preamble_has_commands || (drafts.is_empty() && !spans.is_empty()) {
        strategies.extend(preamble.finish());
    }
    strategies.extend(drafts.into_iter().filter_map(Draft::finish));
    if strategies.is_empty() {
        return Err(GuidanceError::UnparseableGuidance);
    }
    Ok(Guidance { task, os_tag, strategies, raw_text: text.to_string() })
}
