use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Framework, ScriptError, ScriptNode};

/// A script exactly as written in its JSON file, before structural checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptDocument {
    pub topic_id: String,
    pub title: String,
    pub framework: Framework,
    pub root: String,
    pub nodes: NodeEntries,
}

/// The `nodes` object in document order. Duplicate keys are kept so that
/// validation can report them instead of silently keeping the last one.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeEntries(pub Vec<ScriptNode>);

impl ScriptDocument {
    pub fn from_slice(source: &[u8]) -> Result<Self, ScriptError> {
        serde_json::from_slice(source).map_err(classify)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }
}

fn classify(err: serde_json::Error) -> ScriptError {
    use serde_json::error::Category;
    match err.classify() {
        Category::Data => ScriptError::Schema {
            message: err.to_string(),
        },
        Category::Syntax | Category::Eof | Category::Io => ScriptError::Syntax {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        },
    }
}

impl Serialize for NodeEntries {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for node in &self.0 {
            map.serialize_entry(&node.id, node)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for NodeEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = NodeEntries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object mapping node ids to nodes")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<NodeEntries, A::Error> {
                let mut nodes = Vec::with_capacity(access.size_hint().unwrap_or(0));
                while let Some((id, mut node)) = access.next_entry::<String, ScriptNode>()? {
                    node.id = id;
                    nodes.push(node);
                }
                Ok(NodeEntries(nodes))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}
