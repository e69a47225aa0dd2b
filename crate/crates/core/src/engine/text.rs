use std::sync::LazyLock;

use regex::Regex;

use super::Decision;
use crate::irt::{Irt, IrtNode, NodeId, NodeStatus, OsTag};
use crate::session::ScenarioKind;

static SCENARIO: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)scenario\s*[:#]?\s*\**\s*([12])\b").unwrap());
static SELECTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^[\s*#>-]*task\s+selection\s*\**\s*:\s*\**\s*(\d+(?:\.\d+)*)\.?\**\s*(.*)$").unwrap());
static ITEM_PREFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]|\d+[.)])\s*").unwrap());

pub fn parse_scenario(reply: &str) -> Option<ScenarioKind> {
    SCENARIO.captures(reply).map(|c| if &c[1] == "1" { ScenarioKind::ClearObjectives } else { ScenarioKind::UnclearObjectives })
}

/// Reads the `Task selection: <id> <title>` line and the advice after it.
pub fn parse_task_selection(reply: &str, candidates: &[NodeId]) -> Option<Decision> {
    let caps = SELECTION.captures(reply)?;
    let task: NodeId = caps[1].parse().ok()?;
    let end = caps.get(0).expect("whole match").end();
    let concise = reply[end..].trim().to_string();
    let priority_rank = candidates.iter().position(|c| *c == task).map_or(0, |p| p as u32 + 1);
    Some(Decision { task, concise_solution: concise, priority_rank })
}

fn clean_title(raw: &str) -> String {
    let flat = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    let cut = flat.split(" - (").next().unwrap_or("").trim().trim_end_matches(['.', ';', ',']).trim();
    cut.chars().take(120).collect()
}

/// Objective titles read off a goal: one per line, list item or `;` part.
pub fn goal_items(goal: &str) -> Vec<String> {
    let mut items = Vec::new();
    for line in goal.lines() {
        let body = ITEM_PREFIX.replace(line, "");
        let body = body.trim().trim_end_matches(':');
        for part in body.split(';') {
            let title = clean_title(part);
            if !title.is_empty() && !items.contains(&title) {
                items.push(title);
            }
        }
    }
    if items.len() > 1 {
        // a heading line such as "Investigate the following:" is not an objective
        if goal.lines().next().is_some_and(|l| l.trim_end().ends_with(':')) {
            items.remove(0);
        }
    }
    items
}

/// Objectives-only tree built without the planner.
pub fn mechanical_tree(goal: &str, os_tag: OsTag) -> Irt {
    let mut irt = Irt::new(os_tag, false);
    let mut items = goal_items(goal);
    if items.is_empty() {
        items.push(clean_title(goal));
    }
    for (i, title) in items.into_iter().enumerate() {
        let mut node = IrtNode::new(NodeId::root(1).child(i as u32 + 1), title, NodeStatus::Todo);
        node.added_at = 1;
        irt.objectives.children.push(node);
    }
    irt.revision = 1;
    irt
}

fn sensitive_terms(history: &[String]) -> Vec<String> {
    let mut terms: Vec<String> = history
        .iter()
        .flat_map(|m| m.split_whitespace())
        .map(|w| w.trim_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '"' | '\'' | '(' | ')')))
        .filter(|w| w.chars().count() >= 4)
        .filter(|w| {
            let has_digit = w.chars().any(|c| c.is_ascii_digit());
            let has_symbol = w.chars().any(|c| !c.is_alphanumeric());
            let inner_upper = w.chars().skip(1).any(|c| c.is_uppercase());
            has_digit || has_symbol || inner_upper
        })
        .map(str::to_string)
        .collect();
    terms.sort_by_key(|t| std::cmp::Reverse(t.len()));
    terms.dedup();
    terms
}

/// Masks credential-like words from private messages in text that leaves
/// the planner session.
pub fn scrub_private(text: &str, history: &[String]) -> String {
    let mut out = text.to_string();
    for message in history {
        let whole = message.trim();
        if !whole.is_empty() {
            out = out.replace(whole, "•••");
        }
    }
    for term in sensitive_terms(history) {
        out = out.replace(&term, "•••");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_replies() {
        assert_eq!(parse_scenario("Scenario: 2"), Some(ScenarioKind::UnclearObjectives));
        assert_eq!(parse_scenario("**Scenario 1**"), Some(ScenarioKind::ClearObjectives));
        assert_eq!(parse_scenario("no idea"), None);
    }

    #[test]
    fn selection_line_and_advice() {
        let cands: Vec<NodeId> = vec!["2.2".parse().unwrap(), "2.1".parse().unwrap()];
        let d = parse_task_selection("1. Incident ...\n-----\nTask selection: 2.1 Review Command History\nStart with history.", &cands).unwrap();
        assert_eq!(d.task.to_string(), "2.1");
        assert_eq!(d.priority_rank, 2);
        assert_eq!(d.concise_solution, "Start with history.");
        assert!(parse_task_selection("nothing here", &cands).is_none());
    }

    #[test]
    fn goal_lists_become_objectives() {
        assert_eq!(goal_items("OS version; sensitive files in home directory"), ["OS version", "sensitive files in home directory"]);
        assert_eq!(goal_items("Answer the following:\n1. Attacker IP\n2. Webshell password"), ["Attacker IP", "Webshell password"]);
        let irt = mechanical_tree("find the flags", OsTag::Linux);
        assert_eq!(irt.objectives.children.len(), 1);
        assert_eq!(irt.objectives.children[0].title, "find the flags");
    }

    #[test]
    fn private_terms_are_masked() {
        let history = vec!["the admin password found offline is Adm1n@2024; mark 1.2 resolved".to_string()];
        let out = scrub_private("Check logins of admin with Adm1n@2024 and report.", &history);
        assert_eq!(out, "Check logins of admin with ••• and report.");
    }
}
