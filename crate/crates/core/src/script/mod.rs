//! Tree-structured dialogue scripts.
//!
//! A script is authored as one JSON document per topic. Documents are first
//! read into a [`ScriptDocument`], which keeps everything the author wrote
//! (including duplicate node ids), then checked by [`validate_document`] and
//! promoted to an immutable [`DialogueScript`].

mod document;
mod library;
mod traverse;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use document::{NodeEntries, ScriptDocument};
pub use library::{load_corpus, validate_library, Corpus, LibraryManifest, ScriptLibrary};
pub use traverse::BfsRow;
pub use validate::{validate_document, Issue, IssueCode, ValidationReport};

/// Role of a node in the dialogue tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    TherapeuticQuestion,
    Reflection,
    Information,
    Advice,
    UserOption,
    Terminal,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::TherapeuticQuestion => "therapeutic_question",
            NodeKind::Reflection => "reflection",
            NodeKind::Information => "information",
            NodeKind::Advice => "advice",
            NodeKind::UserOption => "user_option",
            NodeKind::Terminal => "terminal",
        }
    }

    /// Speaker every node of this kind must have.
    pub fn expected_speaker(self) -> Speaker {
        match self {
            NodeKind::UserOption => Speaker::User,
            _ => Speaker::Bot,
        }
    }

    /// Information and advice are the "expert content" given on request.
    pub fn is_informational(self) -> bool {
        matches!(self, NodeKind::Information | NodeKind::Advice)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Bot,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Framework {
    #[serde(rename = "MI")]
    Mi,
    #[serde(rename = "CBT")]
    Cbt,
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Framework::Mi => "MI",
            Framework::Cbt => "CBT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptNode {
    #[serde(skip)]
    pub id: String,
    pub kind: NodeKind,
    pub speaker: Speaker,
    pub text: String,
    pub children: Vec<String>,
}

impl ScriptNode {
    pub fn is_bot(&self) -> bool {
        self.speaker == Speaker::Bot
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error: {message}")]
    Schema { message: String },
    #[error("structure error in `{topic_id}`: {}", first_message(.issues))]
    Structure { topic_id: String, issues: Vec<Issue> },
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("duplicate topic `{0}`")]
    DuplicateTopic(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn first_message(issues: &[Issue]) -> String {
    match issues {
        [] => "no issues".to_string(),
        [one] => one.message.clone(),
        [first, rest @ ..] => format!("{} (and {} more)", first.message, rest.len()),
    }
}

impl ScriptError {
    /// Node id of the first structural problem, if any.
    pub fn node_id(&self) -> Option<&str> {
        match self {
            ScriptError::Structure { issues, .. } => {
                issues.first().and_then(|i| i.node_id.as_deref())
            }
            _ => None,
        }
    }
}

/// A validated, immutable dialogue script for one topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueScript {
    topic_id: String,
    title: String,
    framework: Framework,
    root_id: String,
    nodes: BTreeMap<String, ScriptNode>,
    parents: BTreeMap<String, String>,
}

impl DialogueScript {
    /// Parses and validates one script document.
    pub fn parse(source: &[u8]) -> Result<Self, ScriptError> {
        let document = ScriptDocument::from_slice(source)?;
        Self::try_from(document)
    }

    pub fn topic_id(&self) -> &str {
        &self.topic_id
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn framework(&self) -> Framework {
        self.framework
    }

    pub fn root_id(&self) -> &str {
        &self.root_id
    }

    pub fn root(&self) -> &ScriptNode {
        &self.nodes[&self.root_id]
    }

    pub fn node(&self, id: &str) -> Option<&ScriptNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ScriptNode> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn parent(&self, id: &str) -> Option<&ScriptNode> {
        self.parents.get(id).map(|p| &self.nodes[p])
    }

    pub fn children(&self, id: &str) -> impl Iterator<Item = &ScriptNode> {
        self.nodes
            .get(id)
            .into_iter()
            .flat_map(|n| n.children.iter())
            .map(|c| &self.nodes[c])
    }

    /// UserOption children of `id`, in author order. Non-empty means `id` is a
    /// branch point.
    pub fn options(&self, id: &str) -> Vec<&ScriptNode> {
        self.children(id)
            .filter(|c| c.kind == NodeKind::UserOption)
            .collect()
    }

    /// The single Bot child of `id`, when the node continues without user choice.
    pub fn bot_successor(&self, id: &str) -> Option<&ScriptNode> {
        let node = self.nodes.get(id)?;
        match node.children.as_slice() {
            [only] => {
                let child = &self.nodes[only];
                child.is_bot().then_some(child)
            }
            _ => None,
        }
    }

    /// Number of TherapeuticQuestion nodes in the whole tree.
    pub fn question_count(&self) -> usize {
        self.nodes
            .values()
            .filter(|n| n.kind == NodeKind::TherapeuticQuestion)
            .count()
    }

    pub fn terminal_count(&self) -> usize {
        self.nodes
            .values()
            .filter(|n| n.kind == NodeKind::Terminal)
            .count()
    }

    /// Back to the serializable document form.
    pub fn to_document(&self) -> ScriptDocument {
        ScriptDocument {
            topic_id: self.topic_id.clone(),
            title: self.title.clone(),
            framework: self.framework,
            root: self.root_id.clone(),
            nodes: NodeEntries(self.nodes.values().cloned().collect()),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("script serializes")
    }
}

impl TryFrom<ScriptDocument> for DialogueScript {
    type Error = ScriptError;

    fn try_from(document: ScriptDocument) -> Result<Self, Self::Error> {
        let issues = validate_document(&document);
        if !issues.is_empty() {
            return Err(ScriptError::Structure {
                topic_id: document.topic_id,
                issues,
            });
        }
        let nodes: BTreeMap<String, ScriptNode> = document
            .nodes
            .0
            .into_iter()
            .map(|n| (n.id.clone(), n))
            .collect();
        let parents = nodes
            .values()
            .flat_map(|n| n.children.iter().map(move |c| (c.clone(), n.id.clone())))
            .collect();
        Ok(DialogueScript {
            topic_id: document.topic_id,
            title: document.title,
            framework: document.framework,
            root_id: document.root,
            nodes,
            parents,
        })
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Builds a script from `(id, kind, text, children)` rows; first row is root.
    pub fn script(rows: &[(&str, NodeKind, &str, &[&str])]) -> DialogueScript {
        DialogueScript::try_from(document(rows)).expect("valid test script")
    }

    pub fn document(rows: &[(&str, NodeKind, &str, &[&str])]) -> ScriptDocument {
        ScriptDocument {
            topic_id: "t".into(),
            title: "Test".into(),
            framework: Framework::Mi,
            root: rows[0].0.into(),
            nodes: NodeEntries(
                rows.iter()
                    .map(|(id, kind, text, children)| ScriptNode {
                        id: id.to_string(),
                        kind: *kind,
                        speaker: kind.expected_speaker(),
                        text: text.to_string(),
                        children: children.iter().map(|c| c.to_string()).collect(),
                    })
                    .collect(),
            ),
        }
    }
}
