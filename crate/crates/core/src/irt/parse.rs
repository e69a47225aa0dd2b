use std::sync::LazyLock;

use regex::Regex;

use super::{Irt, IrtError, IrtNode, NodeId, NodeStatus, OsTag};

static HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(\d+)\.\s+(.+?)\s*(?:\(\s*(linux|windows)\s*\))?\s*-\s*\[([^\]]*)\]$").unwrap()
});
static NODE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d+(?:\.\d+)+)\.?\s+(.+)$").unwrap());
static STATUS_OPEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+[-–]\s*\(").unwrap());
static RESULTS_FROM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^Results?\s+from\s+(\d+(?:\.\d+)*)\.?\s*:(?: -)?\s*(.*)$").unwrap());
static INLINE_RESULT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^Results?\s*:\s*(.+)$").unwrap());

enum Line {
    Header { section: u32, title: String, os: Option<OsTag>, status: NodeStatus },
    Node { id: NodeId, title: String, token: String },
    ResultsFrom { id: NodeId, note: String },
    InlineResult(String),
    Skip,
}

/// Strips the markdown decoration models tend to wrap around tree lines.
fn normalize(raw: &str) -> String {
    let mut s = raw.trim();
    s = s.trim_start_matches('#').trim_start();
    for bullet in ["- ", "* ", "+ ", "• "] {
        if let Some(rest) = s.strip_prefix(bullet) {
            s = rest.trim_start();
            break;
        }
    }
    s.replace("**", "").trim().to_string()
}

fn is_ellipsis(line: &str) -> bool {
    matches!(line, "..." | "…" | "......")
}

fn classify(line: &str, lineno: usize) -> Result<Option<Line>, IrtError> {
    if line.is_empty() || is_ellipsis(line) {
        return Ok(Some(Line::Skip));
    }
    if let Some(caps) = HEADER.captures(line) {
        let section: u32 = caps[1].parse().map_err(|_| malformed(lineno, "bad section number"))?;
        let status = NodeStatus::from_keyword(&caps[4])
            .ok_or_else(|| malformed(lineno, format!("unparseable status token `{}`", &caps[4])))?;
        let os = caps.get(3).map(|m| m.as_str().parse().expect("regex admits only known tags"));
        return Ok(Some(Line::Header { section, title: caps[2].trim().to_string(), os, status }));
    }
    if let Some(caps) = RESULTS_FROM.captures(line) {
        let id = caps[1].parse().map_err(|_| malformed(lineno, "bad node id in results line"))?;
        return Ok(Some(Line::ResultsFrom { id, note: caps[2].trim().to_string() }));
    }
    if let Some(caps) = INLINE_RESULT.captures(line) {
        return Ok(Some(Line::InlineResult(format!("Result: {}", caps[1].trim()))));
    }
    if let Some(caps) = NODE.captures(line) {
        let id: NodeId = caps[1].parse().map_err(|_| malformed(lineno, format!("bad node id `{}`", &caps[1])))?;
        let rest = caps[2].trim();
        let (title, token) = split_title_status(rest)
            .ok_or_else(|| malformed(lineno, format!("node {id} has no status")))?;
        return Ok(Some(Line::Node { id, title: title.to_string(), token: token.to_string() }));
    }
    Ok(None)
}

fn split_title_status(rest: &str) -> Option<(&str, &str)> {
    if rest.ends_with(')') {
        if let Some(m) = STATUS_OPEN.find(rest) {
            return Some((rest[..m.start()].trim(), rest[m.end()..rest.len() - 1].trim()));
        }
    }
    if rest.ends_with(']') {
        if let Some(pos) = rest.find(" - [") {
            return Some((rest[..pos].trim(), rest[pos + 4..rest.len() - 1].trim()));
        }
    }
    let pos = rest.rfind(" - ")?;
    let token = rest[pos + 3..].trim();
    NodeStatus::from_keyword(token).map(|_| (rest[..pos].trim(), token))
}

fn malformed(line: usize, detail: impl Into<String>) -> IrtError {
    IrtError::MalformedIrt { line, detail: detail.into() }
}

/// Parses the natural-language tree. Status tokens are normalized, and
/// `Results from X:` lines attach to node X.
pub fn parse_irt(text: &str) -> Result<Irt, IrtError> {
    if text.trim().is_empty() {
        return Err(malformed(0, "empty input"));
    }
    let mut os_tag = None;
    let mut objectives: Option<IrtNode> = None;
    let mut procedures: Option<IrtNode> = None;
    let mut last: Option<NodeId> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = normalize(raw);
        let Some(kind) = classify(&line, lineno)? else {
            return Err(malformed(lineno, format!("unrecognized line `{line}`")));
        };
        match kind {
            Line::Skip => {}
            Line::Header { section, title, os, status } => {
                let root = IrtNode::new(NodeId::root(section), title, status);
                match section {
                    1 => {
                        if objectives.is_some() {
                            return Err(malformed(lineno, "duplicate objectives header"));
                        }
                        os_tag = Some(os.ok_or_else(|| malformed(lineno, "objectives header lacks an OS tag"))?);
                        objectives = Some(root);
                    }
                    2 => {
                        if procedures.is_some() {
                            return Err(malformed(lineno, "duplicate procedures header"));
                        }
                        procedures = Some(root);
                    }
                    other => return Err(malformed(lineno, format!("unexpected section {other}"))),
                }
                last = Some(NodeId::root(section));
            }
            Line::Node { id, title, token } => {
                let root = section_root(&mut objectives, &mut procedures, &id)
                    .ok_or_else(|| malformed(lineno, format!("node {id} precedes its section header")))?;
                let status = match NodeStatus::from_keyword(&token) {
                    Some(s) => s,
                    None if id.section() == 1 && !token.is_empty() => NodeStatus::Resolved(token),
                    None => return Err(malformed(lineno, format!("unparseable status token `{token}` on {id}"))),
                };
                if root.find(&id).is_some() {
                    return Err(malformed(lineno, format!("duplicate node {id}")));
                }
                let parent_id = id.parent().expect("node ids have at least two components");
                let parent = root
                    .find_mut(&parent_id)
                    .ok_or_else(|| malformed(lineno, format!("dangling node {id}: parent {parent_id} missing")))?;
                parent.children.push(IrtNode::new(id.clone(), title, status));
                last = Some(id);
            }
            Line::ResultsFrom { id, note } => {
                if note.is_empty() {
                    continue;
                }
                let root = section_root(&mut objectives, &mut procedures, &id)
                    .ok_or_else(|| malformed(lineno, format!("results for unknown node {id}")))?;
                let node = root
                    .find_mut(&id)
                    .ok_or_else(|| malformed(lineno, format!("results for unknown node {id}")))?;
                node.result_notes.push(note);
            }
            Line::InlineResult(note) => {
                let id = last.clone().ok_or_else(|| malformed(lineno, "result line before any node"))?;
                let root = section_root(&mut objectives, &mut procedures, &id).expect("last node exists");
                root.find_mut(&id).expect("last node exists").result_notes.push(note);
            }
        }
    }

    let objectives = objectives.ok_or_else(|| malformed(0, "missing `1. Incident Response Objectives` header"))?;
    Ok(Irt {
        os_tag: os_tag.expect("set with the objectives header"),
        objectives,
        procedures,
        revision: 0,
    })
}

fn section_root<'a>(
    objectives: &'a mut Option<IrtNode>,
    procedures: &'a mut Option<IrtNode>,
    id: &NodeId,
) -> Option<&'a mut IrtNode> {
    match id.section() {
        1 => objectives.as_mut(),
        2 => procedures.as_mut(),
        _ => None,
    }
}

/// Locates the tree inside a longer model reply: from the objectives header
/// through the last contiguous tree line.
pub fn find_irt_block(reply: &str) -> Option<String> {
    let lines: Vec<&str> = reply.lines().collect();
    let start = lines.iter().position(|raw| {
        let line = normalize(raw);
        HEADER.captures(&line).is_some_and(|c| &c[1] == "1")
    })?;
    let mut end = start;
    for (offset, raw) in lines[start..].iter().enumerate() {
        let line = normalize(raw);
        match classify(&line, 0) {
            Ok(Some(Line::Skip)) if line.is_empty() => continue,
            Ok(Some(_)) => end = start + offset,
            _ => break,
        }
    }
    Some(lines[start..=end].join("\n"))
}
