use std::cmp::Reverse;

use super::{Irt, IrtNode, NodeId, NodeStatus};

/// Rank of a pending leaf inside one batch. Objectives that already carry an
/// investigation path (their own sub-tasks, or every objective when there is
/// no procedures section) go first, then procedures, then bare objectives
/// that are waiting on procedure evidence.
fn batch_class(tree: &Irt, node: &IrtNode) -> u8 {
    match (node.id.section(), node.id.depth()) {
        (1, d) if d >= 3 => 0,
        (1, _) if tree.procedures.is_none() => 0,
        (2, _) => 1,
        _ => 2,
    }
}

/// Pending `To-do` leaves, most recently added first. Within a batch the
/// order is by investigation class, then ascending id.
pub fn select_candidates(tree: &Irt, limit: usize) -> Vec<NodeId> {
    let mut pending: Vec<(Reverse<u64>, u8, &NodeId)> = tree
        .roots()
        .flat_map(|root| root.walk().into_iter().skip(1))
        .filter(|n| n.is_leaf() && n.status == NodeStatus::Todo)
        .map(|n| (Reverse(n.added_at), batch_class(tree, n), &n.id))
        .collect();
    pending.sort();
    pending.into_iter().take(limit).map(|(_, _, id)| id.clone()).collect()
}

/// True when every node under the objectives root is completed or resolved.
/// Procedures are instrumental and do not gate completion.
pub fn is_complete(tree: &Irt) -> bool {
    let objectives: Vec<_> = tree.objectives.walk().into_iter().skip(1).collect();
    !objectives.is_empty() && objectives.iter().all(|n| n.status.is_done())
}
