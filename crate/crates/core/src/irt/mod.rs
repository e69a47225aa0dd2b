//! The Incident Response Tree.
//!
//! An [`Irt`] has a mandatory objectives section (`1. Incident Response
//! Objectives`) and, for sessions whose goal lacked explicit objectives, a
//! procedures section (`2. Incident Response Procedures`). Trees are values:
//! every update produces a new tree with a higher revision.

mod parse;
mod render;
mod select;
mod update;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{find_irt_block, parse_irt};
pub use render::{render_irt, render_pending_view};
pub use select::{is_complete, select_candidates};
pub use update::{
    adopt_initial, apply_update, record_result, validate_initial, validate_update, ConstraintViolation,
    ResultMark, UpdateProposal, ViolationKind,
};

pub const OBJECTIVES_TITLE: &str = "Incident Response Objectives";
pub const PROCEDURES_TITLE: &str = "Incident Response Procedures";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IrtError {
    #[error("malformed IRT at line {line}: {detail}")]
    MalformedIrt { line: usize, detail: String },
    #[error("malformed node id `{0}`")]
    MalformedId(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("update rejected with {} constraint violation(s)", .0.len())]
    ConstraintViolationsPresent(Vec<ConstraintViolation>),
}

/// Dotted hierarchical identifier such as `2.2.3`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId(Vec<u32>);

impl NodeId {
    pub fn new(path: Vec<u32>) -> Result<Self, IrtError> {
        if path.is_empty() || path.contains(&0) {
            let text = path.iter().map(u32::to_string).collect::<Vec<_>>().join(".");
            return Err(IrtError::MalformedId(text));
        }
        Ok(NodeId(path))
    }

    pub fn root(section: u32) -> Self {
        NodeId(vec![section.max(1)])
    }

    pub fn path(&self) -> &[u32] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn section(&self) -> u32 {
        self.0[0]
    }

    pub fn parent(&self) -> Option<NodeId> {
        if self.0.len() > 1 {
            Some(NodeId(self.0[..self.0.len() - 1].to_vec()))
        } else {
            None
        }
    }

    pub fn child(&self, index: u32) -> NodeId {
        let mut path = self.0.clone();
        path.push(index.max(1));
        NodeId(path)
    }

    /// True when `self` is `other` extended by exactly one component.
    pub fn is_child_of(&self, other: &NodeId) -> bool {
        self.0.len() == other.0.len() + 1 && self.0.starts_with(&other.0)
    }

    pub fn is_descendant_of(&self, other: &NodeId) -> bool {
        self.0.len() > other.0.len() && self.0.starts_with(&other.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for part in &self.0 {
            if !first {
                f.write_str(".")?;
            }
            write!(f, "{part}")?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for NodeId {
    type Err = IrtError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim().trim_end_matches('.');
        let path = trimmed
            .split('.')
            .map(|p| p.parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| IrtError::MalformedId(s.to_string()))?;
        NodeId::new(path).map_err(|_| IrtError::MalformedId(s.to_string()))
    }
}

impl TryFrom<String> for NodeId {
    type Error = IrtError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<NodeId> for String {
    fn from(id: NodeId) -> Self {
        id.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Todo,
    Completed,
    NotApplicable,
    /// Objective answered; the value is rendered in place of the status.
    Resolved(String),
}

impl NodeStatus {
    /// Maps a surface status token onto a keyword status. Returns `None` for
    /// anything that is not one of the known spellings.
    pub fn from_keyword(token: &str) -> Option<NodeStatus> {
        let t = token.trim().to_ascii_lowercase();
        match t.as_str() {
            "to do" | "to-do" | "todo" | "to_do" => Some(NodeStatus::Todo),
            "completed" | "complete" => Some(NodeStatus::Completed),
            "n/a" | "na" => Some(NodeStatus::NotApplicable),
            _ => None,
        }
    }

    pub fn keyword(&self) -> &str {
        match self {
            NodeStatus::Todo => "To-do",
            NodeStatus::Completed => "Completed",
            NodeStatus::NotApplicable => "N/A",
            NodeStatus::Resolved(v) => v,
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self, NodeStatus::Completed | NodeStatus::Resolved(_))
    }

    pub fn resolved_value(&self) -> Option<&str> {
        match self {
            NodeStatus::Resolved(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OsTag {
    Linux,
    Windows,
}

impl OsTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            OsTag::Linux => "linux",
            OsTag::Windows => "windows",
        }
    }
}

impl fmt::Display for OsTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OsTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linux" => Ok(OsTag::Linux),
            "windows" => Ok(OsTag::Windows),
            other => Err(format!("unknown OS tag `{other}` (expected linux or windows)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrtNode {
    pub id: NodeId,
    pub title: String,
    pub status: NodeStatus,
    #[serde(default)]
    pub result_notes: Vec<String>,
    #[serde(default)]
    pub children: Vec<IrtNode>,
    /// Engine-assigned batch sequence number; never parsed from text.
    #[serde(default)]
    pub added_at: u64,
}

impl IrtNode {
    pub fn new(id: NodeId, title: impl Into<String>, status: NodeStatus) -> Self {
        IrtNode {
            id,
            title: title.into(),
            status,
            result_notes: Vec::new(),
            children: Vec::new(),
            added_at: 0,
        }
    }

    pub fn with_child(mut self, child: IrtNode) -> Self {
        self.children.push(child);
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Pre-order traversal including `self`.
    pub fn walk(&self) -> Vec<&IrtNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            out.push(node);
            for child in node.children.iter().rev() {
                stack.push(child);
            }
        }
        out
    }

    pub fn find(&self, id: &NodeId) -> Option<&IrtNode> {
        if &self.id == id {
            return Some(self);
        }
        if !id.is_descendant_of(&self.id) {
            return None;
        }
        self.children.iter().find_map(|c| c.find(id))
    }

    pub fn find_mut(&mut self, id: &NodeId) -> Option<&mut IrtNode> {
        if &self.id == id {
            return Some(self);
        }
        if !id.is_descendant_of(&self.id) {
            return None;
        }
        self.children.iter_mut().find_map(|c| c.find_mut(id))
    }

    pub fn next_child_index(&self) -> u32 {
        self.children
            .iter()
            .filter_map(|c| c.id.path().last().copied())
            .max()
            .unwrap_or(0)
            + 1
    }

    fn same_structure(&self, other: &IrtNode) -> bool {
        self.id == other.id
            && self.title == other.title
            && self.status == other.status
            && self.result_notes == other.result_notes
            && self.children.len() == other.children.len()
            && self
                .children
                .iter()
                .zip(&other.children)
                .all(|(a, b)| a.same_structure(b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Irt {
    pub os_tag: OsTag,
    pub objectives: IrtNode,
    pub procedures: Option<IrtNode>,
    pub revision: u64,
}

impl Irt {
    /// An empty tree with only the objectives root.
    pub fn new(os_tag: OsTag, with_procedures: bool) -> Self {
        Irt {
            os_tag,
            objectives: IrtNode::new(NodeId::root(1), OBJECTIVES_TITLE, NodeStatus::Todo),
            procedures: with_procedures
                .then(|| IrtNode::new(NodeId::root(2), PROCEDURES_TITLE, NodeStatus::Todo)),
            revision: 0,
        }
    }

    pub fn roots(&self) -> impl Iterator<Item = &IrtNode> {
        std::iter::once(&self.objectives).chain(self.procedures.iter())
    }

    pub fn nodes(&self) -> Vec<&IrtNode> {
        self.roots().flat_map(|r| r.walk()).collect()
    }

    pub fn find(&self, id: &NodeId) -> Option<&IrtNode> {
        self.roots().find_map(|r| r.find(id))
    }

    pub fn find_mut(&mut self, id: &NodeId) -> Option<&mut IrtNode> {
        if let Some(found) = self.objectives.find_mut(id) {
            return Some(found);
        }
        self.procedures.as_mut().and_then(|p| p.find_mut(id))
    }

    pub fn is_objective(&self, id: &NodeId) -> bool {
        id.section() == 1 && id.depth() > 1
    }

    /// Structural equality: ids, titles, statuses, notes and shape. Ignores
    /// the engine-owned `revision` and `added_at` fields, which the text form
    /// does not carry.
    pub fn same_structure(&self, other: &Irt) -> bool {
        self.os_tag == other.os_tag
            && self.objectives.same_structure(&other.objectives)
            && match (&self.procedures, &other.procedures) {
                (None, None) => true,
                (Some(a), Some(b)) => a.same_structure(b),
                _ => false,
            }
    }

    /// Resolved objective values, in tree order.
    pub fn resolved_objectives(&self) -> Vec<(&NodeId, &str)> {
        self.objectives
            .walk()
            .into_iter()
            .skip(1)
            .filter_map(|n| n.status.resolved_value().map(|v| (&n.id, v)))
            .collect()
    }

    pub fn max_added_at(&self) -> u64 {
        self.nodes().iter().map(|n| n.added_at).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_id_round_trips_through_text() {
        let id: NodeId = "2.2.3".parse().unwrap();
        assert_eq!(id.path(), &[2, 2, 3]);
        assert_eq!(id.to_string(), "2.2.3");
        assert_eq!(id.parent().unwrap().to_string(), "2.2");
        assert!(id.is_child_of(&"2.2".parse().unwrap()));
        assert!(!id.is_child_of(&"2".parse().unwrap()));
    }

    #[test]
    fn node_id_rejects_bad_input() {
        assert!("".parse::<NodeId>().is_err());
        assert!("1..2".parse::<NodeId>().is_err());
        assert!("0.1".parse::<NodeId>().is_err());
        assert!("a.b".parse::<NodeId>().is_err());
        // a trailing dot is common in numbered lists
        assert_eq!("2.1.".parse::<NodeId>().unwrap().to_string(), "2.1");
    }

    #[test]
    fn status_keywords_normalize() {
        for s in ["To Do", "To-do", "to-do", "TODO"] {
            assert_eq!(NodeStatus::from_keyword(s), Some(NodeStatus::Todo));
        }
        for s in ["N/A", "NA"] {
            assert_eq!(NodeStatus::from_keyword(s), Some(NodeStatus::NotApplicable));
        }
        assert_eq!(NodeStatus::from_keyword("Completed"), Some(NodeStatus::Completed));
        assert_eq!(NodeStatus::from_keyword("Ubuntu 20.04"), None);
    }

    #[test]
    fn snapshot_json_uses_dotted_ids() {
        let mut irt = Irt::new(OsTag::Linux, false);
        irt.objectives
            .children
            .push(IrtNode::new("1.1".parse().unwrap(), "OS version", NodeStatus::Resolved("Ubuntu 20.04".into())));
        let json = serde_json::to_value(&irt).unwrap();
        assert_eq!(json["os_tag"], "linux");
        assert_eq!(json["objectives"]["children"][0]["id"], "1.1");
        assert_eq!(json["objectives"]["children"][0]["status"]["resolved"], "Ubuntu 20.04");
        let back: Irt = serde_json::from_value(json).unwrap();
        assert_eq!(back, irt);
    }
}
