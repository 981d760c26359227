use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{NodeKind, ScriptDocument, ScriptNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    DuplicateId,
    DuplicateTopic,
    MissingRoot,
    UnknownChild,
    DuplicateChild,
    Cycle,
    MultipleParents,
    Orphan,
    SpeakerMismatch,
    EmptyText,
    TerminalHasChildren,
    MissingTerminal,
    WellFormedBranch,
    NoQuestion,
    ParseError,
}

impl IssueCode {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueCode::DuplicateId => "DUPLICATE_ID",
            IssueCode::DuplicateTopic => "DUPLICATE_TOPIC",
            IssueCode::MissingRoot => "MISSING_ROOT",
            IssueCode::UnknownChild => "UNKNOWN_CHILD",
            IssueCode::DuplicateChild => "DUPLICATE_CHILD",
            IssueCode::Cycle => "CYCLE",
            IssueCode::MultipleParents => "MULTIPLE_PARENTS",
            IssueCode::Orphan => "ORPHAN",
            IssueCode::SpeakerMismatch => "SPEAKER_MISMATCH",
            IssueCode::EmptyText => "EMPTY_TEXT",
            IssueCode::TerminalHasChildren => "TERMINAL_HAS_CHILDREN",
            IssueCode::MissingTerminal => "MISSING_TERMINAL",
            IssueCode::WellFormedBranch => "WELL_FORMED_BRANCH",
            IssueCode::NoQuestion => "NO_QUESTION",
            IssueCode::ParseError => "PARSE_ERROR",
        }
    }
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub topic_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<String>,
    pub code: IssueCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn from_issues(issues: Vec<Issue>) -> Self {
        ValidationReport {
            ok: issues.is_empty(),
            issues,
        }
    }

    pub fn codes(&self) -> Vec<IssueCode> {
        self.issues.iter().map(|i| i.code).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return writeln!(f, "ok: no issues");
        }
        writeln!(f, "{} issue(s):", self.issues.len())?;
        for issue in &self.issues {
            match &issue.node_id {
                Some(node) => writeln!(
                    f,
                    "  {} [{}:{}] {}",
                    issue.code, issue.topic_id, node, issue.message
                )?,
                None => writeln!(f, "  {} [{}] {}", issue.code, issue.topic_id, issue.message)?,
            }
        }
        Ok(())
    }
}

struct Collector<'a> {
    topic_id: &'a str,
    issues: Vec<Issue>,
}

impl Collector<'_> {
    fn push(&mut self, node_id: Option<&str>, code: IssueCode, message: String) {
        self.issues.push(Issue {
            topic_id: self.topic_id.to_string(),
            node_id: node_id.map(str::to_string),
            code,
            message,
        });
    }
}

/// Lists every structural problem of one document. An empty result means the
/// document is a well-formed dialogue tree.
///
/// Edges that close a cycle are reported once and excluded from the remaining
/// checks, as are the second and later definitions of a duplicated id.
pub fn validate_document(doc: &ScriptDocument) -> Vec<Issue> {
    let mut out = Collector {
        topic_id: &doc.topic_id,
        issues: Vec::new(),
    };

    let mut nodes: BTreeMap<&str, &ScriptNode> = BTreeMap::new();
    for node in &doc.nodes.0 {
        if nodes.contains_key(node.id.as_str()) {
            out.push(
                Some(&node.id),
                IssueCode::DuplicateId,
                format!("node id `{}` is defined more than once", node.id),
            );
        } else {
            nodes.insert(&node.id, node);
        }
    }

    // Node-local checks apply to every definition that survived dedup.
    let mut edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for node in nodes.values() {
        if node.speaker != node.kind.expected_speaker() {
            out.push(
                Some(&node.id),
                IssueCode::SpeakerMismatch,
                format!(
                    "{} node must be spoken by {:?}, found {:?}",
                    node.kind,
                    node.kind.expected_speaker(),
                    node.speaker
                ),
            );
        }
        if node.kind != NodeKind::Terminal && node.text.trim().is_empty() {
            out.push(
                Some(&node.id),
                IssueCode::EmptyText,
                format!("{} node has empty text", node.kind),
            );
        }
        let mut seen = BTreeSet::new();
        let mut kept = Vec::new();
        for child in &node.children {
            if !seen.insert(child.as_str()) {
                out.push(
                    Some(&node.id),
                    IssueCode::DuplicateChild,
                    format!("child `{child}` listed twice"),
                );
            } else if !nodes.contains_key(child.as_str()) {
                out.push(
                    Some(&node.id),
                    IssueCode::UnknownChild,
                    format!("child `{child}` does not exist"),
                );
            } else {
                kept.push(child.as_str());
            }
        }
        edges.insert(&node.id, kept);
    }

    let Some(root) = nodes.get(doc.root.as_str()) else {
        out.push(
            None,
            IssueCode::MissingRoot,
            format!("root `{}` is not a node", doc.root),
        );
        return out.issues;
    };

    // Iterative DFS from the root classifies each edge as tree, back (cycle)
    // or cross (second parent). Only tree edges remain for the shape checks.
    let mut tree: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut visited: BTreeSet<&str> = BTreeSet::new();
    let mut on_stack: BTreeSet<&str> = BTreeSet::new();
    let mut stack: Vec<(&str, usize)> = vec![(root.id.as_str(), 0)];
    visited.insert(&root.id);
    on_stack.insert(&root.id);
    tree.insert(&root.id, Vec::new());
    while let Some((id, next)) = stack.last_mut() {
        let id = *id;
        let children = &edges[id];
        if *next == children.len() {
            on_stack.remove(id);
            stack.pop();
            continue;
        }
        let child = children[*next];
        *next += 1;
        if on_stack.contains(child) {
            out.push(
                Some(id),
                IssueCode::Cycle,
                format!("cycle via {child}"),
            );
        } else if visited.contains(child) {
            out.push(
                Some(child),
                IssueCode::MultipleParents,
                format!("node `{child}` is reached from more than one parent (second parent `{id}`)"),
            );
        } else {
            tree.get_mut(id).expect("visited").push(child);
            tree.insert(child, Vec::new());
            visited.insert(child);
            on_stack.insert(child);
            stack.push((child, 0));
        }
    }

    for node in nodes.values() {
        if !visited.contains(node.id.as_str()) {
            out.push(
                Some(&node.id),
                IssueCode::Orphan,
                format!("node `{}` is not reachable from the root", node.id),
            );
        }
    }

    for (&id, children) in &tree {
        let node = nodes[id];
        match node.kind {
            NodeKind::Terminal if !children.is_empty() => out.push(
                Some(id),
                IssueCode::TerminalHasChildren,
                "terminal node has children".into(),
            ),
            _ if children.is_empty() && node.kind != NodeKind::Terminal => out.push(
                Some(id),
                IssueCode::MissingTerminal,
                format!("path ends at {} node instead of a terminal", node.kind),
            ),
            NodeKind::UserOption => {
                let bad = children.len() > 1
                    || children.iter().any(|c| nodes[c].kind == NodeKind::UserOption);
                if bad {
                    out.push(
                        Some(id),
                        IssueCode::WellFormedBranch,
                        "a user option must lead to exactly one bot node".into(),
                    );
                }
            }
            _ => {
                let bad = children.len() > 1
                    && children.iter().any(|c| nodes[c].kind != NodeKind::UserOption);
                if bad {
                    out.push(
                        Some(id),
                        IssueCode::WellFormedBranch,
                        "bot node branches without user options".into(),
                    );
                }
            }
        }
    }

    if !nodes
        .values()
        .any(|n| n.kind == NodeKind::TherapeuticQuestion)
    {
        out.push(
            None,
            IssueCode::NoQuestion,
            "script contains no therapeutic question".into(),
        );
    }

    out.issues
}
