//! Reflector review of the four artifact kinds.
//!
//! Mechanical checks run first. When they find a problem the verdict is
//! fixed without consulting the model.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guidance::{lint_commands, parse_guidance, GuidanceError};
use crate::irt::{
    find_irt_block, parse_irt, render_irt, validate_initial, validate_update, Irt, NodeId, OsTag, UpdateProposal,
};
use crate::session::Role;

static VERDICT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^[\s*#]*verdict\s*[:\-]\s*\**\s*(approve|revise|rollback)\b").unwrap());
static HEADING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^[\s*#]*(causes?|suggestions?)\s*\**\s*:\s*\**\s*(.*)$").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewTarget {
    IrtProposal,
    PlannerDecision,
    GuidanceOutput,
    ExecutionResult,
}

impl ReviewTarget {
    pub const ALL: [ReviewTarget; 4] =
        [ReviewTarget::IrtProposal, ReviewTarget::PlannerDecision, ReviewTarget::GuidanceOutput, ReviewTarget::ExecutionResult];

    pub fn label(&self) -> &'static str {
        match self {
            ReviewTarget::IrtProposal => "IRT proposal",
            ReviewTarget::PlannerDecision => "planner decision",
            ReviewTarget::GuidanceOutput => "generator guidance",
            ReviewTarget::ExecutionResult => "execution result",
        }
    }
}

impl fmt::Display for ReviewTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Revise,
    Rollback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub target: ReviewTarget,
    pub verdict: Verdict,
    pub causes: Vec<String>,
    pub suggestions: Vec<String>,
    /// Set when the verdict came from a local check rather than the model.
    #[serde(default)]
    pub mechanical: bool,
}

impl Reflection {
    pub fn approve(target: ReviewTarget) -> Self {
        Reflection { target, verdict: Verdict::Approve, causes: Vec::new(), suggestions: Vec::new(), mechanical: true }
    }

    fn mechanical(target: ReviewTarget, verdict: Verdict, causes: Vec<String>, suggestions: Vec<String>) -> Self {
        Reflection { target, verdict, causes, suggestions, mechanical: true }.normalized()
    }

    /// Enforces the verdict invariants: Rollback only for IRT proposals, and
    /// every Revise carries at least one suggestion.
    pub fn normalized(mut self) -> Self {
        if self.verdict == Verdict::Rollback && self.target != ReviewTarget::IrtProposal {
            self.verdict = Verdict::Revise;
        }
        if self.verdict != Verdict::Approve && self.suggestions.is_empty() {
            let fallback = match self.causes.first() {
                Some(cause) => format!("Address: {cause}"),
                None => format!("Rework the {} and resubmit it.", self.target),
            };
            self.suggestions.push(fallback);
        }
        self
    }

    /// Feedback text for the producing role.
    pub fn feedback(&self) -> String {
        let mut out = format!("The reviewer returned {:?} for your {}.", self.verdict, self.target);
        if !self.causes.is_empty() {
            out.push_str("\nCauses:");
            for c in &self.causes {
                out.push_str("\n- ");
                out.push_str(c);
            }
        }
        if !self.suggestions.is_empty() {
            out.push_str("\nSuggestions:");
            for s in &self.suggestions {
                out.push_str("\n- ");
                out.push_str(s);
            }
        }
        out
    }
}

fn is_none_marker(item: &str) -> bool {
    matches!(item.trim().trim_end_matches('.').to_ascii_lowercase().as_str(), "" | "none" | "n/a" | "-")
}

/// Parses a Reflector reply. An unreadable verdict line is treated as an
/// approval with the problem recorded as a cause.
pub fn parse_reflection(target: ReviewTarget, reply: &str) -> Reflection {
    let verdict = VERDICT.captures(reply).map(|c| match c[1].to_ascii_lowercase().as_str() {
        "approve" => Verdict::Approve,
        "rollback" => Verdict::Rollback,
        _ => Verdict::Revise,
    });
    let mut causes = Vec::new();
    let mut suggestions = Vec::new();
    let mut section: Option<bool> = None;
    for line in reply.lines() {
        if let Some(caps) = HEADING.captures(line) {
            section = Some(caps[1].to_ascii_lowercase().starts_with("cause"));
            let inline = caps[2].trim();
            if !is_none_marker(inline) {
                push_item(section, inline, &mut causes, &mut suggestions);
            }
            continue;
        }
        if VERDICT.is_match(line) {
            section = None;
            continue;
        }
        let item = line.trim().trim_start_matches(['-', '*', '•']).trim();
        if !is_none_marker(item) {
            push_item(section, item, &mut causes, &mut suggestions);
        }
    }
    let reflection = match verdict {
        Some(verdict) => Reflection { target, verdict, causes, suggestions, mechanical: false },
        None => {
            causes.insert(0, "reviewer reply had no readable verdict".to_string());
            Reflection { target, verdict: Verdict::Approve, causes, suggestions, mechanical: false }
        }
    };
    reflection.normalized()
}

fn push_item(section: Option<bool>, item: &str, causes: &mut Vec<String>, suggestions: &mut Vec<String>) {
    match section {
        Some(true) => causes.push(item.to_string()),
        Some(false) => suggestions.push(item.to_string()),
        None => {}
    }
}

/// Parses a Planner reply into a proposal, accepting either a bare tree or a
/// tree embedded in prose.
pub fn proposal_from_reply(reply: &str, os_tag: OsTag, role: Role) -> Result<UpdateProposal, String> {
    let block = find_irt_block(reply).ok_or_else(|| "reply contains no tree starting with `1. Incident Response Objectives`".to_string())?;
    let mut tree = parse_irt(&block).map_err(|e| e.to_string())?;
    if tree.os_tag != os_tag {
        tree.os_tag = os_tag;
    }
    Ok(UpdateProposal::new(Some(role), tree, reply.trim()))
}

/// What the reviewer knows besides the artifact itself.
#[derive(Debug, Clone, Copy)]
pub struct ReviewContext<'a> {
    /// The tree in force; `None` before the first tree is adopted.
    pub current: Option<&'a Irt>,
    pub os_tag: OsTag,
    pub expect_procedures: bool,
    pub candidates: &'a [NodeId],
    /// Task the artifact concerns: the decided task for decisions, or the
    /// task being worked for guidance and results.
    pub task: Option<&'a NodeId>,
}

/// Local checks that dominate the model's opinion.
pub fn mechanical_check(target: ReviewTarget, content: &str, ctx: &ReviewContext<'_>) -> Option<Reflection> {
    match target {
        ReviewTarget::IrtProposal => {
            let proposal = match proposal_from_reply(content, ctx.os_tag, Role::Planner) {
                Ok(p) => p,
                Err(e) => {
                    return Some(Reflection::mechanical(
                        target,
                        Verdict::Rollback,
                        vec![format!("tree does not parse: {e}")],
                        vec!["Restate the full tree in the required format.".to_string()],
                    ))
                }
            };
            let violations = match ctx.current {
                Some(current) => validate_update(current, &proposal),
                None => validate_initial(&proposal.new_tree, ctx.expect_procedures),
            };
            if violations.is_empty() {
                return None;
            }
            let suggestion = match ctx.current {
                Some(current) => format!("Start again from the previous tree and only append or complete nodes:\n{}", render_irt(current)),
                None => "Build the tree again following the rules.".to_string(),
            };
            Some(Reflection::mechanical(target, Verdict::Rollback, violations.iter().map(|v| v.to_string()).collect(), vec![suggestion]))
        }
        ReviewTarget::PlannerDecision => {
            let task = ctx.task?;
            if ctx.candidates.contains(task) {
                return None;
            }
            let listed = ctx.candidates.iter().map(NodeId::to_string).collect::<Vec<_>>().join(", ");
            Some(Reflection::mechanical(
                target,
                Verdict::Revise,
                vec![format!("task {task} is not a pending sub-task")],
                vec![format!("Choose one of the pending sub-tasks: {listed}.")],
            ))
        }
        ReviewTarget::GuidanceOutput => {
            let task = ctx.task.cloned().unwrap_or_else(|| NodeId::root(1));
            match parse_guidance(content, task, ctx.os_tag) {
                Err(e @ (GuidanceError::UnpairedDelimiter { .. } | GuidanceError::EmptyCommand { .. })) => Some(Reflection::mechanical(
                    target,
                    Verdict::Revise,
                    vec![format!("formatting: {e}")],
                    vec!["Wrap every command as `$ command $`, and escape a literal dollar sign as `\\$`.".to_string()],
                )),
                Err(GuidanceError::UnparseableGuidance) => Some(Reflection::mechanical(
                    target,
                    Verdict::Revise,
                    vec!["guidance contains no steps or commands".to_string()],
                    vec!["Give numbered steps with the commands to run.".to_string()],
                )),
                Ok(guidance) => {
                    let cmds: Vec<_> = guidance.commands().cloned().collect();
                    let findings = lint_commands(&cmds);
                    if findings.is_empty() {
                        return None;
                    }
                    let causes = findings.iter().map(|f| format!("{:?}: {} ({})", f.kind, f.command, f.detail)).collect();
                    Some(Reflection::mechanical(
                        target,
                        Verdict::Revise,
                        causes,
                        vec![format!("Replace the flagged commands with targeted {} commands for this sub-task.", ctx.os_tag)],
                    ))
                }
            }
        }
        ReviewTarget::ExecutionResult => None,
    }
}

/// The user message sent to the Reflector session.
pub fn review_request(target: ReviewTarget, content: &str, ctx: &ReviewContext<'_>) -> String {
    let mut out = format!("Target: {}\n", target.label());
    if let Some(current) = ctx.current {
        out.push_str("\nCurrent tree:\n");
        out.push_str(&render_irt(current));
        out.push('\n');
    }
    if let Some(task) = ctx.task {
        let title = ctx.current.and_then(|t| t.find(task)).map(|n| n.title.as_str()).unwrap_or("");
        out.push_str(&format!("\nSub-task: {task} {title}\n"));
    }
    out.push_str("\nArtifact:\n");
    out.push_str(content.trim());
    out
}

#[derive(Debug, Error)]
pub enum ReviewError<E: std::error::Error + 'static> {
    #[error("nothing to review")]
    EmptyContent,
    #[error(transparent)]
    Provider(E),
}

/// Reviews one artifact. `ask` sends a request to the Reflector session and
/// is not called when a mechanical check already decides the verdict.
pub fn review<E, F>(target: ReviewTarget, content: &str, ctx: &ReviewContext<'_>, ask: F) -> Result<Reflection, ReviewError<E>>
where
    E: std::error::Error + 'static,
    F: FnOnce(&str) -> Result<String, E>,
{
    if content.trim().is_empty() {
        return Err(ReviewError::EmptyContent);
    }
    if let Some(found) = mechanical_check(target, content, ctx) {
        return Ok(found);
    }
    let reply = ask(&review_request(target, content, ctx)).map_err(ReviewError::Provider)?;
    Ok(parse_reflection(target, &reply))
}
