use std::fmt::Write;

use super::{Irt, IrtNode, NodeStatus};

/// Renders the tree in its natural-language surface form. Deterministic, and
/// `parse_irt(render_irt(t))` is structurally equal to `t`.
pub fn render_irt(tree: &Irt) -> String {
    let mut out = String::new();
    let obj = &tree.objectives;
    let _ = write!(out, "{}. {} ({}) - [{}]", obj.id, obj.title, tree.os_tag, obj.status.keyword());
    render_notes(&mut out, obj);
    for child in &obj.children {
        render_node(&mut out, child, false);
    }
    if let Some(proc_root) = &tree.procedures {
        let _ = write!(out, "\n{}. {} - [{}]", proc_root.id, proc_root.title, proc_root.status.keyword());
        render_notes(&mut out, proc_root);
        for child in &proc_root.children {
            render_node(&mut out, child, false);
        }
    }
    out
}

/// Objectives-only view with resolved values withheld. Used for roles that
/// need to know what is still open but must not see answers supplied over
/// the private planner channel.
pub fn render_pending_view(tree: &Irt) -> String {
    let mut out = String::new();
    let obj = &tree.objectives;
    let _ = write!(out, "{}. {} ({}) - [{}]", obj.id, obj.title, tree.os_tag, obj.status.keyword());
    for child in &obj.children {
        render_node(&mut out, child, true);
    }
    out
}

fn render_node(out: &mut String, node: &IrtNode, withhold: bool) {
    let indent = "  ".repeat(node.id.depth() - 1);
    let status = match (&node.status, withhold) {
        (NodeStatus::Resolved(_), true) => "Resolved",
        (status, _) => status.keyword(),
    };
    let _ = write!(out, "\n{indent}{} {} - ({status})", node.id, node.title);
    if !withhold {
        render_notes(out, node);
    }
    for child in &node.children {
        render_node(out, child, withhold);
    }
}

fn render_notes(out: &mut String, node: &IrtNode) {
    let indent = "  ".repeat(node.id.depth());
    for note in &node.result_notes {
        let _ = write!(out, "\n{indent}Results from {}: - {note}", node.id);
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse_irt, IrtNode, NodeStatus, OsTag};
    use super::*;

    #[test]
    fn renders_single_todo_objective() {
        let mut irt = Irt::new(OsTag::Linux, false);
        irt.objectives
            .children
            .push(IrtNode::new("1.1".parse().unwrap(), "Attacker IP", NodeStatus::Todo));
        assert_eq!(
            render_irt(&irt),
            "1. Incident Response Objectives (linux) - [To-do]\n  1.1 Attacker IP - (To-do)"
        );
    }

    #[test]
    fn renders_results_lines() {
        let mut irt = Irt::new(OsTag::Linux, true);
        let mut node = IrtNode::new("2.1".parse().unwrap(), "Review Command History", NodeStatus::Completed);
        node.result_notes.push("saw wget of a miner".into());
        irt.procedures.as_mut().unwrap().children.push(node);
        let text = render_irt(&irt);
        assert!(text.contains("\n    Results from 2.1: - saw wget of a miner"));
        assert!(parse_irt(&text).unwrap().same_structure(&irt));
    }

    #[test]
    fn pending_view_hides_values() {
        let mut irt = Irt::new(OsTag::Windows, false);
        irt.objectives.children.push(IrtNode::new(
            "1.1".parse().unwrap(),
            "Admin password",
            NodeStatus::Resolved("s3cret".into()),
        ));
        let view = render_pending_view(&irt);
        assert!(view.contains("1.1 Admin password - (Resolved)"));
        assert!(!view.contains("s3cret"));
    }
}
