use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Irt, IrtError, IrtNode, NodeId, NodeStatus, OBJECTIVES_TITLE, PROCEDURES_TITLE};
use crate::session::Role;

/// A full replacement candidate for the current tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateProposal {
    /// `None` when the engine built the tree mechanically.
    pub produced_by: Option<Role>,
    pub new_tree: Irt,
    #[serde(default)]
    pub rationale: String,
}

impl UpdateProposal {
    pub fn new(produced_by: Option<Role>, new_tree: Irt, rationale: impl Into<String>) -> Self {
        UpdateProposal { produced_by, new_tree, rationale: rationale.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    RootModified,
    ObjectiveDeleted,
    NaInObjectives,
    OrphanNode,
    StatusRegression,
    MalformedId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    pub kind: ViolationKind,
    pub node: Option<NodeId>,
    pub detail: String,
}

impl ConstraintViolation {
    fn new(kind: ViolationKind, node: Option<&NodeId>, detail: impl Into<String>) -> Self {
        ConstraintViolation { kind, node: node.cloned(), detail: detail.into() }
    }
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(id) => write!(f, "{:?} at {id}: {}", self.kind, self.detail),
            None => write!(f, "{:?}: {}", self.kind, self.detail),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultMark {
    Completed,
    Resolved,
}

fn title_key(title: &str) -> String {
    title.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

/// Checks that hold for any tree on its own: id shape, parentage and the
/// N/A ban under objectives.
fn structural(tree: &Irt) -> Vec<ConstraintViolation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (expected, root) in [(1u32, Some(&tree.objectives)), (2, tree.procedures.as_ref())] {
        let Some(root) = root else { continue };
        if root.id != NodeId::root(expected) {
            out.push(ConstraintViolation::new(
                ViolationKind::MalformedId,
                Some(&root.id),
                format!("section root must be {expected}"),
            ));
            continue;
        }
        check_subtree(root, expected, &mut seen, &mut out);
    }
    out
}

fn check_subtree(node: &IrtNode, section: u32, seen: &mut HashSet<NodeId>, out: &mut Vec<ConstraintViolation>) {
    if !seen.insert(node.id.clone()) {
        out.push(ConstraintViolation::new(ViolationKind::MalformedId, Some(&node.id), "duplicate id"));
    }
    if node.title.trim().is_empty() || node.title.contains('\n') || node.title.contains(" - (") {
        out.push(ConstraintViolation::new(ViolationKind::MalformedId, Some(&node.id), "title is not a single plain line"));
    }
    if node.result_notes.iter().any(|n| n.contains('\n')) {
        out.push(ConstraintViolation::new(ViolationKind::MalformedId, Some(&node.id), "result notes must be single lines"));
    }
    if node.id.depth() > 1 {
        match &node.status {
            NodeStatus::NotApplicable if section == 1 => out.push(ConstraintViolation::new(
                ViolationKind::NaInObjectives,
                Some(&node.id),
                "N/A is not permitted under objectives",
            )),
            NodeStatus::Resolved(_) if section != 1 => out.push(ConstraintViolation::new(
                ViolationKind::MalformedId,
                Some(&node.id),
                "resolved values are only allowed on objectives",
            )),
            NodeStatus::Resolved(v) if v.trim().is_empty() || v.contains('\n') => out.push(ConstraintViolation::new(
                ViolationKind::MalformedId,
                Some(&node.id),
                "resolved value must be one non-empty line",
            )),
            _ => {}
        }
    }
    for child in &node.children {
        if child.id.section() != section {
            out.push(ConstraintViolation::new(
                ViolationKind::MalformedId,
                Some(&child.id),
                format!("id does not belong to section {section}"),
            ));
        } else if !child.id.is_child_of(&node.id) {
            out.push(ConstraintViolation::new(
                ViolationKind::OrphanNode,
                Some(&child.id),
                format!("listed under {} but id does not extend it", node.id),
            ));
        }
        check_subtree(child, section, seen, out);
    }
}

fn check_roots(tree: &Irt, expect_procedures: bool, out: &mut Vec<ConstraintViolation>) {
    if title_key(&tree.objectives.title) != title_key(OBJECTIVES_TITLE) {
        out.push(ConstraintViolation::new(
            ViolationKind::RootModified,
            Some(&tree.objectives.id),
            format!("objectives root retitled to `{}`", tree.objectives.title),
        ));
    }
    match (&tree.procedures, expect_procedures) {
        (Some(p), true) if title_key(&p.title) != title_key(PROCEDURES_TITLE) => {
            out.push(ConstraintViolation::new(
                ViolationKind::RootModified,
                Some(&p.id),
                format!("procedures root retitled to `{}`", p.title),
            ))
        }
        (Some(p), false) => out.push(ConstraintViolation::new(
            ViolationKind::RootModified,
            Some(&p.id),
            "procedures section is not part of this session",
        )),
        (None, true) => out.push(ConstraintViolation::new(
            ViolationKind::RootModified,
            Some(&NodeId::root(2)),
            "procedures section removed",
        )),
        _ => {}
    }
}

/// Validates a first tree for a session classified with or without a
/// procedures section.
pub fn validate_initial(tree: &Irt, expect_procedures: bool) -> Vec<ConstraintViolation> {
    let mut out = structural(tree);
    check_roots(tree, expect_procedures, &mut out);
    if tree.objectives.children.is_empty() {
        out.push(ConstraintViolation::new(
            ViolationKind::ObjectiveDeleted,
            Some(&tree.objectives.id),
            "no objectives listed",
        ));
    }
    out
}

/// Diffs `proposal` against `current`. An empty list means the update keeps
/// both roots, every objective, and every completed or resolved status.
pub fn validate_update(current: &Irt, proposal: &UpdateProposal) -> Vec<ConstraintViolation> {
    let next = &proposal.new_tree;
    let mut out = structural(next);
    if next.os_tag != current.os_tag {
        out.push(ConstraintViolation::new(
            ViolationKind::RootModified,
            Some(&next.objectives.id),
            format!("OS tag changed from {} to {}", current.os_tag, next.os_tag),
        ));
    }
    if title_key(&next.objectives.title) != title_key(&current.objectives.title) {
        out.push(ConstraintViolation::new(
            ViolationKind::RootModified,
            Some(&next.objectives.id),
            format!("objectives root retitled to `{}`", next.objectives.title),
        ));
    }
    match (&current.procedures, &next.procedures) {
        (Some(a), Some(b)) if title_key(&a.title) != title_key(&b.title) => out.push(ConstraintViolation::new(
            ViolationKind::RootModified,
            Some(&b.id),
            format!("procedures root retitled to `{}`", b.title),
        )),
        (Some(a), None) => {
            out.push(ConstraintViolation::new(ViolationKind::RootModified, Some(&a.id), "procedures section removed"))
        }
        (None, Some(b)) => out.push(ConstraintViolation::new(
            ViolationKind::RootModified,
            Some(&b.id),
            "procedures section is not part of this session",
        )),
        _ => {}
    }

    for old in current.nodes().into_iter().filter(|n| n.id.depth() > 1) {
        let found = next.find(&old.id);
        let objective = old.id.section() == 1;
        match found {
            None if objective => out.push(ConstraintViolation::new(
                ViolationKind::ObjectiveDeleted,
                Some(&old.id),
                format!("objective `{}` removed", old.title),
            )),
            None if old.status.is_done() || !old.result_notes.is_empty() => {
                out.push(ConstraintViolation::new(
                    ViolationKind::StatusRegression,
                    Some(&old.id),
                    "procedure carrying evidence removed",
                ))
            }
            None => {}
            Some(new) => {
                if objective && old.id.depth() == 2 && title_key(&old.title) != title_key(&new.title) {
                    out.push(ConstraintViolation::new(
                        ViolationKind::ObjectiveDeleted,
                        Some(&old.id),
                        format!("objective `{}` replaced by `{}`", old.title, new.title),
                    ));
                }
                if old.status.is_done() && !new.status.is_done() {
                    out.push(ConstraintViolation::new(
                        ViolationKind::StatusRegression,
                        Some(&old.id),
                        format!("{} regressed to {}", old.status.keyword(), new.status.keyword()),
                    ));
                }
            }
        }
    }
    out
}

/// Applies a validated proposal. Existing nodes keep their batch number and
/// notes; nodes new to the tree share one fresh batch number.
pub fn apply_update(current: &Irt, proposal: &UpdateProposal) -> Result<Irt, IrtError> {
    let violations = validate_update(current, proposal);
    if !violations.is_empty() {
        return Err(IrtError::ConstraintViolationsPresent(violations));
    }
    let mut next = proposal.new_tree.clone();
    let batch = current.max_added_at() + 1;
    let objectives = std::mem::replace(&mut next.objectives, IrtNode::new(NodeId::root(1), "", NodeStatus::Todo));
    next.objectives = carry_over(objectives, current, batch);
    next.procedures = next.procedures.take().map(|p| carry_over(p, current, batch));
    next.objectives.title = current.objectives.title.clone();
    if let (Some(p), Some(old)) = (next.procedures.as_mut(), current.procedures.as_ref()) {
        p.title = old.title.clone();
    }
    next.revision = current.revision + 1;
    Ok(next)
}

/// Accepts a session's first tree: revision 1, every node in batch 1.
pub fn adopt_initial(tree: &Irt, expect_procedures: bool) -> Result<Irt, IrtError> {
    let violations = validate_initial(tree, expect_procedures);
    if !violations.is_empty() {
        return Err(IrtError::ConstraintViolationsPresent(violations));
    }
    let mut next = tree.clone();
    next.objectives = carry_over(next.objectives, &Irt::new(tree.os_tag, false), 1);
    next.procedures = next.procedures.take().map(|p| carry_over(p, &Irt::new(tree.os_tag, false), 1));
    next.revision = 1;
    Ok(next)
}

fn carry_over(mut node: IrtNode, current: &Irt, batch: u64) -> IrtNode {
    match current.find(&node.id) {
        Some(old) => {
            node.added_at = old.added_at;
            node.result_notes = merge_notes(&old.result_notes, node.result_notes);
        }
        None => node.added_at = batch,
    }
    node.children = node.children.into_iter().map(|c| carry_over(c, current, batch)).collect();
    node
}

fn merge_notes(old: &[String], new: Vec<String>) -> Vec<String> {
    if new.starts_with(old) {
        return new;
    }
    let mut merged = old.to_vec();
    merged.extend(new.into_iter().filter(|n| !old.contains(n)));
    merged
}

fn flatten(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Records an execution outcome on `node`. The returned tree keeps the
/// current revision; it becomes a proposal for [`apply_update`].
pub fn record_result(tree: &Irt, node: &NodeId, outcome: &str, mark: ResultMark) -> Result<Irt, IrtError> {
    let objective = tree.is_objective(node);
    let mut next = tree.clone();
    let target = next.find_mut(node).filter(|n| n.id.depth() > 1).ok_or_else(|| IrtError::UnknownNode(node.clone()))?;
    let value = flatten(outcome);
    if !value.is_empty() {
        target.result_notes.push(format!("Result: {value}"));
    }
    target.status = match mark {
        ResultMark::Resolved if objective && !value.is_empty() => NodeStatus::Resolved(value),
        _ => NodeStatus::Completed,
    };
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::super::{parse_irt, OsTag};
    use super::*;

    fn nacos() -> Irt {
        let text = "1. Incident Response Objectives (linux) - [To-do]
  1.1 Attacker IP - (To-do)
2. Incident Response Procedures - [To-do]
  2.1 Review Command History - (To-do)
  2.2 Investigate Sensitive Directories - (To-do)";
        adopt_initial(&parse_irt(text).unwrap(), true).unwrap()
    }

    fn propose(tree: Irt) -> UpdateProposal {
        UpdateProposal::new(Some(Role::Planner), tree, "")
    }

    fn kinds(v: &[ConstraintViolation]) -> Vec<ViolationKind> {
        v.iter().map(|c| c.kind).collect()
    }

    #[test]
    fn root_rename_is_rejected() {
        let cur = nacos();
        let mut next = cur.clone();
        next.objectives.title = "Objectives".into();
        assert_eq!(kinds(&validate_update(&cur, &propose(next))), [ViolationKind::RootModified]);
    }

    #[test]
    fn na_under_objectives_is_rejected() {
        let cur = nacos();
        let mut next = cur.clone();
        next.objectives.children[0].status = NodeStatus::NotApplicable;
        assert_eq!(kinds(&validate_update(&cur, &propose(next))), [ViolationKind::NaInObjectives]);
    }

    #[test]
    fn appended_subtask_is_clean() {
        let cur = nacos();
        let mut next = cur.clone();
        let dirs = next.find_mut(&"2.2".parse().unwrap()).unwrap();
        dirs.children.push(IrtNode::new("2.2.4".parse().unwrap(), "Review schema.sql", NodeStatus::Todo));
        assert!(validate_update(&cur, &propose(next)).is_empty());
    }

    #[test]
    fn deleting_an_objective_and_regressing_are_rejected() {
        let cur = record_result(&nacos(), &"2.1".parse().unwrap(), "wget miner", ResultMark::Completed).unwrap();
        let cur = apply_update(&nacos(), &propose(cur)).unwrap();
        let mut next = cur.clone();
        next.objectives.children.clear();
        next.find_mut(&"2.1".parse().unwrap()).unwrap().status = NodeStatus::Todo;
        let found = kinds(&validate_update(&cur, &propose(next)));
        assert!(found.contains(&ViolationKind::ObjectiveDeleted));
        assert!(found.contains(&ViolationKind::StatusRegression));
    }

    #[test]
    fn orphan_and_misplaced_ids() {
        let cur = nacos();
        let mut next = cur.clone();
        next.objectives.children[0].children.push(IrtNode::new("1.2.1".parse().unwrap(), "x", NodeStatus::Todo));
        next.objectives.children.push(IrtNode::new("2.9".parse().unwrap(), "y", NodeStatus::Todo));
        let found = kinds(&validate_update(&cur, &propose(next)));
        assert_eq!(found, [ViolationKind::OrphanNode, ViolationKind::MalformedId]);
    }

    #[test]
    fn apply_increments_revision_and_batches_new_nodes() {
        let cur = nacos();
        let mut next = cur.clone();
        let dirs = next.find_mut(&"2.2".parse().unwrap()).unwrap();
        for (i, t) in ["List /opt/nacos", "Open conf", "Review nacos-mysql.sql"].iter().enumerate() {
            dirs.children.push(IrtNode::new(format!("2.2.{}", i + 1).parse().unwrap(), *t, NodeStatus::Todo));
        }
        let applied = apply_update(&cur, &propose(next)).unwrap();
        assert_eq!(applied.revision, cur.revision + 1);
        let before = cur.max_added_at();
        for id in ["2.2.1", "2.2.2", "2.2.3"] {
            assert!(applied.find(&id.parse().unwrap()).unwrap().added_at > before);
        }
        assert_eq!(applied.find(&"2.1".parse().unwrap()).unwrap().added_at, 1);
    }

    #[test]
    fn reapplying_identical_tree_only_bumps_revision() {
        let cur = nacos();
        let applied = apply_update(&cur, &propose(cur.clone())).unwrap();
        assert_eq!(applied.revision, cur.revision + 1);
        assert!(applied.same_structure(&cur));
        assert_eq!(applied.max_added_at(), cur.max_added_at());
    }

    #[test]
    fn apply_refuses_invalid_proposal() {
        let cur = nacos();
        let mut next = cur.clone();
        next.procedures = None;
        assert!(matches!(apply_update(&cur, &propose(next)), Err(IrtError::ConstraintViolationsPresent(_))));
    }

    #[test]
    fn dropped_notes_are_restored() {
        let cur = record_result(&nacos(), &"2.1".parse().unwrap(), "saw wget", ResultMark::Completed).unwrap();
        let cur = apply_update(&nacos(), &propose(cur)).unwrap();
        let mut next = cur.clone();
        next.find_mut(&"2.1".parse().unwrap()).unwrap().result_notes.clear();
        let applied = apply_update(&cur, &propose(next)).unwrap();
        assert_eq!(applied.find(&"2.1".parse().unwrap()).unwrap().result_notes, ["Result: saw wget"]);
    }

    #[test]
    fn record_on_procedure_completes_it() {
        let mut tree = nacos();
        tree.find_mut(&"2.2".parse().unwrap())
            .unwrap()
            .children
            .push(IrtNode::new("2.2.3".parse().unwrap(), "Review nacos-mysql.sql", NodeStatus::Todo));
        let id: NodeId = "2.2.3".parse().unwrap();
        let out = record_result(&tree, &id, "$2a$10$...", ResultMark::Resolved).unwrap();
        let node = out.find(&id).unwrap();
        assert_eq!(node.result_notes, ["Result: $2a$10$..."]);
        assert_eq!(node.status, NodeStatus::Completed);
    }

    #[test]
    fn record_on_objective_resolves_it() {
        let mut tree = Irt::new(OsTag::Linux, false);
        tree.objectives.children.push(IrtNode::new("1.6".parse().unwrap(), "Flag 1", NodeStatus::Todo));
        let id: NodeId = "1.6".parse().unwrap();
        let out = record_result(&tree, &id, "flag1{Network@_2020_Hack}", ResultMark::Resolved).unwrap();
        assert_eq!(out.find(&id).unwrap().status, NodeStatus::Resolved("flag1{Network@_2020_Hack}".into()));
    }

    #[test]
    fn record_on_missing_node() {
        let err = record_result(&nacos(), &"9.9".parse().unwrap(), "x", ResultMark::Completed).unwrap_err();
        assert_eq!(err, IrtError::UnknownNode("9.9".parse().unwrap()));
    }

    #[test]
    fn initial_tree_must_match_scenario() {
        let tree = parse_irt("1. Incident Response Objectives (linux) - [To-do]\n  1.1 OS - (To-do)").unwrap();
        assert!(validate_initial(&tree, false).is_empty());
        assert_eq!(kinds(&validate_initial(&tree, true)), [ViolationKind::RootModified]);
    }
}
