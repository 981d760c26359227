use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{DialogueScript, NodeKind};

/// One line of a breadth-first listing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BfsRow {
    pub depth: usize,
    pub node_id: String,
    pub kind: NodeKind,
    pub text: String,
}

impl DialogueScript {
    /// Breadth-first listing from the root. Siblings keep their parent's child
    /// order; nodes deeper than `max_depth` are omitted.
    pub fn bfs_serialize(&self, max_depth: Option<usize>) -> Vec<BfsRow> {
        let mut rows = Vec::with_capacity(self.len());
        let mut queue = VecDeque::from([(self.root_id(), 0usize)]);
        while let Some((id, depth)) = queue.pop_front() {
            let node = &self.nodes[id];
            rows.push(BfsRow {
                depth,
                node_id: node.id.clone(),
                kind: node.kind,
                text: node.text.clone(),
            });
            if max_depth.is_some_and(|max| depth >= max) {
                continue;
            }
            queue.extend(node.children.iter().map(|c| (c.as_str(), depth + 1)));
        }
        rows
    }

    /// Depth of the deepest node (root is 0).
    pub fn depth(&self) -> usize {
        self.bfs_serialize(None)
            .last()
            .map(|r| r.depth)
            .unwrap_or_default()
    }

    /// Every root-to-terminal sequence of node ids, in depth-first author order.
    pub fn enumerate_paths(&self) -> Vec<Vec<String>> {
        let mut paths = Vec::new();
        let mut stack = vec![vec![self.root_id().to_string()]];
        while let Some(path) = stack.pop() {
            let last = &self.nodes[path.last().expect("non-empty path")];
            if last.children.is_empty() {
                paths.push(path);
                continue;
            }
            for child in last.children.iter().rev() {
                let mut next = path.clone();
                next.push(child.clone());
                stack.push(next);
            }
        }
        paths
    }

    /// Option ids chosen along `path`, i.e. the input that replays it.
    pub fn choices_on_path(&self, path: &[String]) -> Vec<String> {
        path.iter()
            .filter(|id| self.nodes[id.as_str()].kind == NodeKind::UserOption)
            .cloned()
            .collect()
    }

    /// TherapeuticQuestion ids along `path`, in path order.
    pub fn questions_on_path(&self, path: &[String]) -> Vec<String> {
        path.iter()
            .filter(|id| {
                self.nodes
                    .get(id.as_str())
                    .is_some_and(|n| n.kind == NodeKind::TherapeuticQuestion)
            })
            .cloned()
            .collect()
    }

    /// Follows the path from the root taking `choices` at each branch point.
    /// Missing or unknown choices fall back to the first option.
    pub fn realized_path(&self, choices: &[String]) -> Vec<String> {
        let mut path = vec![self.root_id().to_string()];
        let mut choices = choices.iter();
        let mut current = self.root_id();
        loop {
            let options = self.options(current);
            let next = if options.is_empty() {
                match self.nodes[current].children.first() {
                    Some(child) => child.as_str(),
                    None => break,
                }
            } else {
                let wanted = choices.next();
                let option = wanted
                    .and_then(|w| options.iter().find(|o| &o.id == w))
                    .unwrap_or(&options[0]);
                option.id.as_str()
            };
            path.push(next.to_string());
            current = next;
        }
        path
    }
}
