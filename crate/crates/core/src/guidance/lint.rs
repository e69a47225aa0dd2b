use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CommandBlock;
use crate::irt::OsTag;

const DEFAULT_RULES: &str = include_str!("../../config/lint.toml");

static VERB_NOUN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Z][a-z]+-[A-Z][A-Za-z]+$").unwrap());
static SEGMENT_SPLIT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\|\||&&|[|;\n]").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LintKind {
    ProhibitedGlobalSearch,
    DestructivePattern,
    UnknownOsMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub kind: LintKind,
    pub command: String,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum LintConfigError {
    #[error("cannot read lint rules: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid lint rules: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("rule `{name}` has an invalid pattern: {source}")]
    Pattern { name: String, source: regex::Error },
}

#[derive(Debug, Deserialize)]
struct RuleDoc {
    name: String,
    pattern: String,
    detail: String,
}

#[derive(Debug, Deserialize, Default)]
struct OsDoc {
    #[serde(default)]
    commands: Vec<String>,
    #[serde(default)]
    verb_noun_cmdlets: bool,
}

#[derive(Debug, Deserialize)]
struct RulesDoc {
    #[serde(default)]
    prohibited: Vec<RuleDoc>,
    #[serde(default)]
    destructive: Vec<RuleDoc>,
    #[serde(default)]
    os: BTreeMap<String, OsDoc>,
}

#[derive(Debug, Clone)]
struct Rule {
    name: String,
    pattern: Regex,
    detail: String,
}

/// Compiled lint configuration.
#[derive(Debug, Clone)]
pub struct LintRules {
    prohibited: Vec<Rule>,
    destructive: Vec<Rule>,
    windows_only: HashSet<String>,
    windows_cmdlets: bool,
    linux_only: HashSet<String>,
}

impl Default for LintRules {
    fn default() -> Self {
        LintRules::from_toml(DEFAULT_RULES).expect("built-in lint rules are valid")
    }
}

impl LintRules {
    pub fn from_toml(text: &str) -> Result<Self, LintConfigError> {
        let doc: RulesDoc = toml::from_str(text)?;
        let compile = |rules: Vec<RuleDoc>| -> Result<Vec<Rule>, LintConfigError> {
            rules
                .into_iter()
                .map(|r| {
                    let pattern = Regex::new(&r.pattern).map_err(|source| LintConfigError::Pattern { name: r.name.clone(), source })?;
                    Ok(Rule { name: r.name, pattern, detail: r.detail })
                })
                .collect()
        };
        let mut os = doc.os;
        let windows = os.remove("windows").unwrap_or_default();
        let linux = os.remove("linux").unwrap_or_default();
        Ok(LintRules {
            prohibited: compile(doc.prohibited)?,
            destructive: compile(doc.destructive)?,
            windows_only: windows.commands.into_iter().map(|c| c.to_ascii_lowercase()).collect(),
            windows_cmdlets: windows.verb_noun_cmdlets,
            linux_only: linux.commands.into_iter().map(|c| c.to_ascii_lowercase()).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, LintConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn lint(&self, cmds: &[CommandBlock]) -> Vec<LintFinding> {
        let mut out = Vec::new();
        for cmd in cmds {
            for (rules, kind) in [(&self.prohibited, LintKind::ProhibitedGlobalSearch), (&self.destructive, LintKind::DestructivePattern)] {
                for rule in rules.iter().filter(|r| r.pattern.is_match(&cmd.command)) {
                    out.push(LintFinding { kind, command: cmd.command.clone(), detail: format!("{}: {}", rule.name, rule.detail) });
                }
            }
            for program in programs(&cmd.command) {
                if let Some(detail) = self.os_mismatch(&program, cmd.os_tag) {
                    out.push(LintFinding { kind: LintKind::UnknownOsMismatch, command: cmd.command.clone(), detail });
                }
            }
        }
        out
    }

    fn os_mismatch(&self, program: &str, os: OsTag) -> Option<String> {
        let lower = program.to_ascii_lowercase();
        match os {
            OsTag::Linux if self.windows_only.contains(&lower) => Some(format!("`{program}` is a Windows command")),
            OsTag::Linux if self.windows_cmdlets && VERB_NOUN.is_match(program) => {
                Some(format!("`{program}` is a PowerShell cmdlet"))
            }
            OsTag::Windows if self.linux_only.contains(&lower) => Some(format!("`{program}` is not available on Windows")),
            _ => None,
        }
    }
}

/// First word of every pipeline segment, with `sudo` and variable
/// assignments skipped and directories stripped.
fn programs(command: &str) -> Vec<String> {
    let mut out = Vec::new();
    for segment in SEGMENT_SPLIT.split(command) {
        let mut words = segment.split_whitespace().skip_while(|w| {
            w.contains('=') && !w.starts_with('=') && !w.starts_with('-')
        });
        let Some(mut first) = words.next() else { continue };
        if first == "sudo" {
            match words.next() {
                Some(w) => first = w,
                None => {
                    out.push("sudo".to_string());
                    continue;
                }
            }
        }
        let first = first.trim_start_matches(['(', '{']);
        let name = first.rsplit(['/', '\\']).next().unwrap_or(first);
        if !name.is_empty() && !name.starts_with('$') && !name.starts_with('-') {
            out.push(name.to_string());
        }
    }
    out
}

/// Lints with the built-in rule set.
pub fn lint_commands(cmds: &[CommandBlock]) -> Vec<LintFinding> {
    static RULES: LazyLock<LintRules> = LazyLock::new(LintRules::default);
    RULES.lint(cmds)
}
