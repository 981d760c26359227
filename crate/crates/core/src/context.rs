//! Machine-readable blocks embedded in prompts.
//!
//! The natural-language part of a prompt is free to change; these blocks are
//! the stable contract that the deterministic mocks read. A script block is
//! one JSON header line followed by one JSON line per node.

use serde::{Deserialize, Serialize};

use crate::script::NodeKind;

pub const SCRIPT_OPEN: &str = "<<<SCRIPT_CONTEXT";
pub const SCRIPT_CLOSE: &str = "SCRIPT_CONTEXT>>>";
pub const STRATEGY_OPEN: &str = "<<<STRATEGY_CONTEXT";
pub const STRATEGY_CLOSE: &str = "STRATEGY_CONTEXT>>>";

/// Literal token a backend emits when the topic has reached its end.
pub const CLOSING_MARKER: &str = "[TOPIC_COMPLETE]";

/// Marker placed on a node whose subtree did not fit the prompt budget.
pub const ELIDED_MARKER: &str = "(subtree elided)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptBlockHeader {
    pub topic_id: String,
    /// Node ids the conversation is expected to continue with, nearest first.
    pub next: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextNode {
    pub depth: usize,
    pub id: String,
    pub kind: NodeKind,
    pub text: String,
    pub children: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptBlock {
    pub header: ScriptBlockHeader,
    pub nodes: Vec<ContextNode>,
}

impl ScriptBlock {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(SCRIPT_OPEN);
        out.push('\n');
        out.push_str(&serde_json::to_string(&self.header).expect("header serializes"));
        out.push('\n');
        for node in &self.nodes {
            out.push_str(&serde_json::to_string(node).expect("node serializes"));
            out.push('\n');
        }
        out.push_str(SCRIPT_CLOSE);
        out
    }

    /// Finds and decodes the first script block in `text`.
    pub fn find(text: &str) -> Option<Self> {
        let body = between(text, SCRIPT_OPEN, SCRIPT_CLOSE)?;
        let mut lines = body.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = serde_json::from_str(lines.next()?).ok()?;
        let nodes = lines
            .map(serde_json::from_str)
            .collect::<Result<Vec<ContextNode>, _>>()
            .ok()?;
        Some(ScriptBlock { header, nodes })
    }

    pub fn node(&self, id: &str) -> Option<&ContextNode> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

/// Facts a strategy classifier may use, embedded in the prediction prompt.
///
/// `labels` lists the codes for asking, reflecting and informing first, in
/// that order, then any others. `pending_questions` counts the closing
/// message as a question still to come.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyBlock {
    pub labels: Vec<String>,
    pub multi_label: bool,
    pub pending_questions: usize,
    pub info_available: bool,
    pub non_question_streak: u32,
    pub nudge: bool,
}

impl StrategyBlock {
    pub fn render(&self) -> String {
        format!(
            "{STRATEGY_OPEN}\n{}\n{STRATEGY_CLOSE}",
            serde_json::to_string(self).expect("strategy block serializes")
        )
    }

    pub fn find(text: &str) -> Option<Self> {
        serde_json::from_str(between(text, STRATEGY_OPEN, STRATEGY_CLOSE)?.trim()).ok()
    }
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(&text[start..end])
}

/// Splits a backend reply into chat bubbles: non-empty trimmed lines, with
/// the closing marker removed. Returns the bubbles and whether the marker
/// was present.
pub fn split_reply(text: &str) -> (Vec<String>, bool) {
    let closed = text.contains(CLOSING_MARKER);
    let bubbles = text
        .lines()
        .map(|l| l.replace(CLOSING_MARKER, ""))
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    (bubbles, closed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_block_round_trip_inside_prose() {
        let block = ScriptBlock {
            header: ScriptBlockHeader {
                topic_id: "t".into(),
                next: vec!["n4".into()],
                max_depth: None,
            },
            nodes: vec![ContextNode {
                depth: 0,
                id: "n4".into(),
                kind: NodeKind::Reflection,
                text: "You sound \"tired\".".into(),
                children: vec![],
                note: None,
            }],
        };
        let prompt = format!("You are a coach.\n{}\nFollow the rules.", block.render());
        assert_eq!(ScriptBlock::find(&prompt), Some(block));
        assert_eq!(ScriptBlock::find("no block here"), None);
    }

    #[test]
    fn reply_splitting() {
        let (b, closed) = split_reply("Thanks.\n\n  Bye for now. [TOPIC_COMPLETE]\n");
        assert_eq!(b, vec!["Thanks.", "Bye for now."]);
        assert!(closed);
        let (b, closed) = split_reply("[TOPIC_COMPLETE]");
        assert!(b.is_empty() && closed);
    }
}
