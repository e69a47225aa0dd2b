//! Tree-of-thought analysis of execution results.

use std::collections::{BTreeMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::irt::{render_pending_view, validate_update, ConstraintViolation, Irt, IrtNode, NodeId, NodeStatus, UpdateProposal};
use crate::session::{estimate_tokens, Role};

pub const DEFAULT_BRANCHES: usize = 3;
pub const DEFAULT_THRESHOLD: f64 = 0.6;
pub const DEFAULT_MAX_RESULT_TOKENS: usize = 8000;

static SECTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^[\s*#]*(hypothesis|evidence|findings?|resolved|follow[\s-]?ups?)\s*\**\s*:\s*\**\s*(.*)$").unwrap()
});
static SCORE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^[\s*#]*(?:score|branch\s*\d+)\s*\**\s*:\s*\**\s*(\d+(?:\.\d+)?)\s*/\s*10").unwrap());
static RESOLVED_ITEM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d+(?:\.\d+)+)\.?\s*[:=\-]\s*(.+)$").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub branches: usize,
    pub threshold: f64,
    pub max_result_tokens: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { branches: DEFAULT_BRANCHES, threshold: DEFAULT_THRESHOLD, max_result_tokens: DEFAULT_MAX_RESULT_TOKENS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotBranch {
    pub hypothesis: String,
    pub supporting_evidence: Vec<String>,
    pub findings: Vec<String>,
    pub resolved: Vec<(NodeId, String)>,
    pub follow_ups: Vec<String>,
    /// Self-rating rescaled to [0, 1]; 0 when the reply carries none.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Hypothesis,
    Evidence,
    Findings,
    Resolved,
    FollowUps,
}

fn none_marker(item: &str) -> bool {
    matches!(item.trim().trim_end_matches('.').to_ascii_lowercase().as_str(), "" | "none" | "n/a")
}

fn strip_quotes(value: &str) -> &str {
    value.trim().trim_matches(|c| matches!(c, '`' | '"' | '\'' | '“' | '”')).trim()
}

/// Parses one Analyst completion.
pub fn parse_branch(reply: &str) -> TotBranch {
    let mut branch = TotBranch {
        hypothesis: String::new(),
        supporting_evidence: Vec::new(),
        findings: Vec::new(),
        resolved: Vec::new(),
        follow_ups: Vec::new(),
        score: SCORE
            .captures(reply)
            .and_then(|c| c[1].parse::<f64>().ok())
            .map_or(0.0, |s| s.clamp(0.0, 10.0) / 10.0),
    };
    let mut section = None;
    for line in reply.lines() {
        if SCORE.is_match(line) {
            section = None;
            continue;
        }
        let item = if let Some(caps) = SECTION.captures(line) {
            let name = caps[1].to_ascii_lowercase();
            section = Some(match name.chars().next() {
                Some('h') => Section::Hypothesis,
                Some('e') => Section::Evidence,
                Some('r') => Section::Resolved,
                Some('f') if name.starts_with("find") => Section::Findings,
                _ => Section::FollowUps,
            });
            caps.get(2).map_or("", |m| m.as_str()).trim().to_string()
        } else {
            line.trim().trim_start_matches(['-', '*', '•']).trim().to_string()
        };
        if none_marker(&item) {
            continue;
        }
        match section {
            Some(Section::Hypothesis) => {
                if !branch.hypothesis.is_empty() {
                    branch.hypothesis.push(' ');
                }
                branch.hypothesis.push_str(&item);
            }
            Some(Section::Evidence) => branch.supporting_evidence.push(strip_quotes(&item).to_string()),
            Some(Section::Findings) => branch.findings.push(item),
            Some(Section::Resolved) => {
                if let Some(caps) = RESOLVED_ITEM.captures(&item) {
                    if let Ok(id) = caps[1].parse::<NodeId>() {
                        branch.resolved.push((id, strip_quotes(&caps[2]).to_string()));
                    }
                }
            }
            Some(Section::FollowUps) => branch.follow_ups.push(item),
            None => {}
        }
    }
    branch
}

/// Head and tail of an over-long result with an elision marker between.
pub fn truncate_result(text: &str, max_tokens: usize) -> (String, bool) {
    if estimate_tokens(text) <= max_tokens {
        return (text.to_string(), false);
    }
    let chars: Vec<char> = text.chars().collect();
    let keep = chars.len() / 4;
    let head: String = chars[..keep].iter().collect();
    let tail: String = chars[chars.len() - keep..].iter().collect();
    let omitted = chars.len() - 2 * keep;
    (format!("{head}\n[... {omitted} characters omitted ...]\n{tail}"), true)
}

/// The request for branch `index` (1-based) of `total`.
pub fn analysis_request(result: &str, irt: &Irt, task: &NodeId, index: usize, total: usize) -> String {
    let title = irt.find(task).map(|n| n.title.as_str()).unwrap_or("");
    format!(
        "Sub-task: {task} {title}\n\nOpen objectives:\n{}\n\nCommand output:\n{}\n\nBranch {index} of {total}: give one interpretation.",
        render_pending_view(irt),
        result.trim()
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub findings: Vec<String>,
    pub proposed_update: UpdateProposal,
    pub resolved_objectives: BTreeMap<NodeId, String>,
    pub follow_ups: Vec<NodeId>,
    /// Values a branch claimed without support in the result or notes.
    pub unsupported: Vec<(NodeId, String)>,
    pub branches: Vec<TotBranch>,
    pub truncated: bool,
}

#[derive(Debug, Error)]
pub enum AnalysisError<E: std::error::Error + 'static> {
    #[error("no branch reached the merge threshold (best score {best:.2}); {suggestion}")]
    NoViableBranch { best: f64, suggestion: String },
    #[error("unknown task {0}")]
    UnknownTask(NodeId),
    #[error("merged proposal violates tree constraints: {0:?}")]
    InvalidProposal(Vec<ConstraintViolation>),
    #[error(transparent)]
    Provider(E),
}

fn key(title: &str) -> String {
    title.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

fn flatten(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn clean_title(raw: &str) -> String {
    let flat = flatten(&raw.replace("**", "").replace('`', ""));
    let cut = flat.split(" - (").next().unwrap_or("").trim().trim_end_matches(['.', ':', ';']).trim();
    cut.chars().take(120).collect()
}

fn has_evidence(value: &str, result: &str, irt: &Irt) -> bool {
    let value = flatten(value);
    if value.is_empty() {
        return false;
    }
    let result = flatten(result);
    result.contains(&value) || irt.nodes().iter().any(|n| n.result_notes.iter().any(|note| note.contains(&value)))
}

/// Runs `config.branches` isolated Analyst completions and merges the
/// in-threshold ones. `ask(i, request)` performs completion `i`.
pub fn analyze<E, F>(result: &str, irt: &Irt, task: &NodeId, config: &AnalysisConfig, mut ask: F) -> Result<AnalysisOutcome, AnalysisError<E>>
where
    E: std::error::Error + 'static,
    F: FnMut(usize, &str) -> Result<String, E>,
{
    if irt.find(task).is_none_or(|n| n.id.depth() < 2) {
        return Err(AnalysisError::UnknownTask(task.clone()));
    }
    if result.trim().is_empty() {
        return Err(AnalysisError::NoViableBranch {
            best: 0.0,
            suggestion: "the command produced no output; rerun it or try another command".to_string(),
        });
    }
    let (view, truncated) = truncate_result(result, config.max_result_tokens);
    let total = config.branches.max(1);
    let mut branches = Vec::with_capacity(total);
    for i in 1..=total {
        let reply = ask(i, &analysis_request(&view, irt, task, i, total)).map_err(AnalysisError::Provider)?;
        branches.push(parse_branch(&reply));
    }
    let mut outcome = merge(branches, irt, task, result, config.threshold)?;
    outcome.truncated = truncated;
    Ok(outcome)
}

/// Merges scored branches into one proposal against `irt`.
pub fn merge<E: std::error::Error + 'static>(
    branches: Vec<TotBranch>,
    irt: &Irt,
    task: &NodeId,
    result: &str,
    threshold: f64,
) -> Result<AnalysisOutcome, AnalysisError<E>> {
    let best = branches.iter().map(|b| b.score).fold(0.0, f64::max);
    let mut viable: Vec<&TotBranch> = branches.iter().filter(|b| b.score >= threshold).collect();
    if viable.is_empty() {
        return Err(AnalysisError::NoViableBranch {
            best,
            suggestion: "no interpretation is well supported; route the result for human review".to_string(),
        });
    }
    viable.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut findings = Vec::new();
    for f in viable.iter().flat_map(|b| b.findings.iter()) {
        let f = flatten(f);
        if !f.is_empty() && !findings.contains(&f) {
            findings.push(f);
        }
    }

    let mut resolved = BTreeMap::new();
    let mut unsupported = Vec::new();
    for (id, value) in viable.iter().flat_map(|b| b.resolved.iter()) {
        let value = flatten(value);
        if resolved.contains_key(id) {
            continue;
        }
        let pending = irt.is_objective(id) && irt.find(id).is_some_and(|n| n.status == NodeStatus::Todo);
        if !pending {
            continue;
        }
        if value.contains(" - (") || !has_evidence(&value, result, irt) {
            if !unsupported.iter().any(|(i, v)| i == id && *v == value) {
                unsupported.push((id.clone(), value));
            }
            continue;
        }
        resolved.insert(id.clone(), value);
    }

    let mut next = irt.clone();
    let note = match (findings.is_empty(), viable[0].hypothesis.is_empty()) {
        (false, _) => findings.join("; "),
        (true, false) => flatten(&viable[0].hypothesis),
        (true, true) => String::new(),
    };
    let task_is_objective = irt.is_objective(task);
    for (id, value) in &resolved {
        if let Some(node) = next.find_mut(id) {
            node.status = NodeStatus::Resolved(value.clone());
        }
    }
    {
        let node = next.find_mut(task).expect("task checked by caller");
        if !note.is_empty() {
            node.result_notes.push(format!("Result: {note}"));
        }
        if !task_is_objective {
            node.status = NodeStatus::Completed;
        }
    }

    let task_done = next.find(task).is_some_and(|n| n.status.is_done());
    let parent = if !task_done {
        Some(task.clone())
    } else if task_is_objective {
        next.procedures.as_ref().map(|p| p.id.clone())
    } else {
        Some(task.clone())
    };
    let mut seen: HashSet<String> = next.nodes().iter().map(|n| key(&n.title)).collect();
    let mut follow_ups = Vec::new();
    if let Some(parent) = parent {
        for raw in viable.iter().flat_map(|b| b.follow_ups.iter()) {
            let title = clean_title(raw);
            if title.is_empty() || !seen.insert(key(&title)) {
                continue;
            }
            let holder: &mut IrtNode = next.find_mut(&parent).expect("parent exists");
            let id = holder.id.child(holder.next_child_index());
            holder.children.push(IrtNode::new(id.clone(), title, NodeStatus::Todo));
            follow_ups.push(id);
        }
    }

    let proposal = UpdateProposal::new(Some(Role::Analyst), next, viable[0].hypothesis.clone());
    let violations = validate_update(irt, &proposal);
    if !violations.is_empty() {
        return Err(AnalysisError::InvalidProposal(violations));
    }
    Ok(AnalysisOutcome {
        findings,
        proposed_update: proposal,
        resolved_objectives: resolved,
        follow_ups,
        unsupported,
        branches,
        truncated: false,
    })
}
