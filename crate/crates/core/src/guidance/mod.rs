//! Generator guidance: strategies, steps and `$`-delimited commands.

mod extract;
mod lint;
mod parse;

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::irt::{NodeId, OsTag};

pub use extract::{extract_commands, wrap_command};
pub use lint::{lint_commands, LintConfigError, LintFinding, LintKind, LintRules};
pub use parse::parse_guidance;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuidanceError {
    #[error("odd number of `$` markers ({markers}); every command needs an opening and a closing marker")]
    UnpairedDelimiter { markers: usize },
    #[error("command {index} between markers is empty")]
    EmptyCommand { index: usize },
    #[error("reply contains neither steps nor commands")]
    UnparseableGuidance,
}

impl GuidanceError {
    /// True for marker-format problems, as opposed to missing content.
    pub fn is_formatting(&self) -> bool {
        !matches!(self, GuidanceError::UnparseableGuidance)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandBlock {
    pub command: String,
    pub os_tag: OsTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub instruction: String,
    pub commands: Vec<CommandBlock>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub description: String,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guidance {
    pub task: NodeId,
    pub os_tag: OsTag,
    pub strategies: Vec<Strategy>,
    pub raw_text: String,
}

impl Guidance {
    pub fn commands(&self) -> impl Iterator<Item = &CommandBlock> {
        self.strategies.iter().flat_map(|s| s.steps.iter()).flat_map(|st| st.commands.iter())
    }

    /// Reply-format text that parses back into the same strategies.
    pub fn to_markup(&self) -> String {
        let mut out = String::new();
        for (i, strategy) in self.strategies.iter().enumerate() {
            let _ = writeln!(out, "Strategy {}: {}", i + 1, strategy.description);
            for (j, step) in strategy.steps.iter().enumerate() {
                let _ = writeln!(out, "{}. {}", j + 1, step.instruction);
                for cmd in &step.commands {
                    let _ = writeln!(out, "   {}", wrap_command(&cmd.command));
                }
            }
        }
        out.trim_end().to_string()
    }

    /// Plain-text card for terminal display.
    pub fn render_card(&self) -> String {
        let mut out = format!("Guidance for {} ({})\n", self.task, self.os_tag);
        for (i, strategy) in self.strategies.iter().enumerate() {
            let _ = writeln!(out, "Strategy {}: {}", i + 1, strategy.description);
            for (j, step) in strategy.steps.iter().enumerate() {
                let _ = writeln!(out, "  {}. {}", j + 1, step.instruction);
                for cmd in &step.commands {
                    for line in cmd.command.lines() {
                        let _ = writeln!(out, "       {line}");
                    }
                }
            }
        }
        out
    }
}
