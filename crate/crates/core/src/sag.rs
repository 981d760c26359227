//! Script-aligned generation by prompting.
//!
//! The whole script is serialized breadth-first into the system prompt and
//! the backend is asked to walk it. Position is tracked afterwards by fuzzy
//! matching each reply line against a frontier of plausible next nodes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backend::{
    estimate_tokens, Backend, ChatMessage, CompletionRequest, DEFAULT_GENERATION_TEMPERATURE,
};
use crate::context::{
    split_reply, ContextNode, ScriptBlock, ScriptBlockHeader, CLOSING_MARKER, ELIDED_MARKER,
};
use crate::metrics::{fuzzy_similarity, DEFAULT_MATCH_THRESHOLD};
use crate::prompt;
use crate::script::{DialogueScript, NodeKind, ScriptLibrary};
use crate::turn::{BotTurn, BubbleAnnotation, EngineError, OptionButton, UserInput};

/// Sent as the only message when the bot opens the conversation.
pub const OPENING_CUE: &str = "(The client has joined the conversation.)";

/// Stand-in for a client's free-text answer in exported training pairs.
pub const CLIENT_REPLY_PLACEHOLDER: &str = "[client reply]";

/// How many unmatched bot nodes the tracker may skip over.
pub const FRONTIER_SKIP: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SagConfig {
    pub threshold: f64,
    /// Budget for the system prompt, in estimated tokens.
    pub token_budget: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for SagConfig {
    fn default() -> Self {
        SagConfig {
            threshold: DEFAULT_MATCH_THRESHOLD,
            token_budget: 6000,
            temperature: DEFAULT_GENERATION_TEMPERATURE,
            max_tokens: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SagSessionState {
    pub topic_id: String,
    pub history: Vec<ChatMessage>,
    /// Candidate next nodes, nearest first.
    pub frontier: Vec<String>,
    /// Every node matched so far (bot nodes and chosen options), in order.
    pub matched_nodes: Vec<String>,
    pub matched_questions: BTreeSet<String>,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub matched_node_id: Option<String>,
    pub similarity: f64,
    pub new_frontier: Vec<String>,
}

/// Children of `node_id`, continuing through at most [`FRONTIER_SKIP`]
/// bot nodes. Options are included but never passed through.
pub fn frontier_after(script: &DialogueScript, node_id: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut level: Vec<&str> = script
        .children(node_id)
        .map(|c| c.id.as_str())
        .collect();
    for depth in 0..=FRONTIER_SKIP {
        let mut next = Vec::new();
        for id in level {
            out.push(id.to_string());
            let node = script.node(id).expect("child exists");
            if depth < FRONTIER_SKIP && node.is_bot() && node.kind != NodeKind::Terminal {
                next.extend(node.children.iter().map(String::as_str));
            }
        }
        level = next;
    }
    out
}

/// Matches one bot utterance against the bot nodes of `frontier`.
pub fn track_position(
    script: &DialogueScript,
    bot_text: &str,
    frontier: &[String],
    threshold: f64,
) -> TrackResult {
    best_match(script, bot_text, frontier, threshold, |k| k != NodeKind::UserOption)
}

/// Matches a user message against the options of `frontier`.
pub fn track_user(
    script: &DialogueScript,
    user_text: &str,
    frontier: &[String],
    threshold: f64,
) -> TrackResult {
    best_match(script, user_text, frontier, threshold, |k| k == NodeKind::UserOption)
}

fn best_match(
    script: &DialogueScript,
    text: &str,
    frontier: &[String],
    threshold: f64,
    eligible: impl Fn(NodeKind) -> bool,
) -> TrackResult {
    let mut best: Option<(&str, f64)> = None;
    for id in frontier {
        let Some(node) = script.node(id) else { continue };
        if !eligible(node.kind) {
            continue;
        }
        let sim = fuzzy_similarity(text, &node.text);
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((id, sim));
        }
    }
    match best {
        Some((id, sim)) if sim >= threshold => TrackResult {
            matched_node_id: Some(id.to_string()),
            similarity: sim,
            new_frontier: frontier_after(script, id),
        },
        other => TrackResult {
            matched_node_id: None,
            similarity: other.map(|(_, s)| s).unwrap_or(0.0),
            new_frontier: frontier.to_vec(),
        },
    }
}

fn context_nodes(script: &DialogueScript, max_depth: Option<usize>) -> Vec<ContextNode> {
    script
        .bfs_serialize(max_depth)
        .into_iter()
        .map(|row| {
            let node = script.node(&row.node_id).expect("listed node exists");
            let elided = max_depth == Some(row.depth) && !node.children.is_empty();
            ContextNode {
                depth: row.depth,
                id: row.node_id,
                kind: row.kind,
                text: row.text,
                children: node.children.clone(),
                note: elided.then(|| ELIDED_MARKER.to_string()),
            }
        })
        .collect()
}

fn node_depth(script: &DialogueScript, id: &str) -> usize {
    let mut depth = 0;
    let mut cur = id;
    while let Some(parent) = script.parent(cur) {
        depth += 1;
        cur = &parent.id;
    }
    depth
}

fn sag_system_prompt(script: &DialogueScript, next: &[String], max_depth: Option<usize>) -> String {
    let mut nodes = context_nodes(script, max_depth);
    // Expected nodes are always listed, even below a truncation depth.
    for id in next {
        if nodes.iter().all(|n| &n.id != id) {
            if let Some(node) = script.node(id) {
                nodes.push(ContextNode {
                    depth: node_depth(script, id),
                    id: id.clone(),
                    kind: node.kind,
                    text: node.text.clone(),
                    children: node.children.clone(),
                    note: None,
                });
            }
        }
    }
    let block = ScriptBlock {
        header: ScriptBlockHeader {
            topic_id: script.topic_id().to_string(),
            next: next.to_vec(),
            max_depth,
        },
        nodes,
    };
    prompt::render(
        prompt::SAG_SYSTEM,
        &[
            ("title", script.title()),
            ("context", &block.render()),
            ("closing_marker", CLOSING_MARKER),
        ],
    )
}

/// Builds the generation request: persona, the breadth-first script block
/// with `next` marking the expected continuation, navigation rules, and the
/// history as messages. Trees over budget are cut by depth.
pub fn build_sag_prompt(
    script: &DialogueScript,
    history: &[ChatMessage],
    next: &[String],
    config: &SagConfig,
) -> Result<CompletionRequest, EngineError> {
    let mut system = sag_system_prompt(script, next, None);
    if estimate_tokens(&system) > config.token_budget {
        let mut depth = script.depth().saturating_sub(1);
        loop {
            if depth == 0 {
                let needed = estimate_tokens(&sag_system_prompt(script, next, Some(1)));
                return Err(EngineError::PromptTooLarge {
                    needed,
                    budget: config.token_budget,
                });
            }
            system = sag_system_prompt(script, next, Some(depth));
            if estimate_tokens(&system) <= config.token_budget {
                break;
            }
            depth -= 1;
        }
    }
    let messages = if history.is_empty() {
        vec![ChatMessage::user(OPENING_CUE)]
    } else {
        history.to_vec()
    };
    Ok(CompletionRequest {
        system_prompt: system,
        messages,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
        tag: "sag.generate".into(),
    })
}

/// Options under the most recently matched bot node. Options deeper in the
/// frontier are not offered until the node that asks for them is reached.
pub fn offered_options(script: &DialogueScript, state: &SagSessionState) -> Vec<String> {
    match state.matched_nodes.last().and_then(|id| script.node(id)) {
        Some(node) if node.is_bot() => script.options(&node.id).into_iter().map(|o| o.id.clone()).collect(),
        _ => Vec::new(),
    }
}

fn option_buttons(script: &DialogueScript, offered: &[String]) -> Vec<OptionButton> {
    offered
        .iter()
        .filter_map(|id| script.node(id))
        .map(|n| OptionButton {
            option_id: n.id.clone(),
            label: n.text.clone(),
        })
        .collect()
}

fn generate(
    script: &DialogueScript,
    mut state: SagSessionState,
    backend: &dyn Backend,
    config: &SagConfig,
    user_match: Option<String>,
) -> Result<(SagSessionState, BotTurn), EngineError> {
    let request = build_sag_prompt(script, &state.history, &state.frontier, config)?;
    let reply = backend.complete(&request)?;
    let (bubbles, closed) = split_reply(&reply.text);

    let mut annotations = Vec::with_capacity(bubbles.len());
    for bubble in &bubbles {
        let tracked = track_position(script, bubble, &state.frontier, config.threshold);
        if let Some(id) = &tracked.matched_node_id {
            record_match(script, &mut state, id);
            state.frontier = tracked.new_frontier;
        }
        annotations.push(BubbleAnnotation {
            matched_node_id: tracked.matched_node_id,
            strategy: None,
        });
    }
    if closed && !state.completed {
        let terminal = state
            .frontier
            .iter()
            .find(|id| script.node(id).is_some_and(|n| n.kind == NodeKind::Terminal))
            .cloned();
        if let Some(id) = terminal {
            record_match(script, &mut state, &id);
            state.frontier.clear();
        }
        state.completed = true;
    }
    state.history.push(ChatMessage::assistant(bubbles.join("\n")));

    let turn = BotTurn {
        options: if state.completed {
            Vec::new()
        } else {
            option_buttons(script, &offered_options(script, &state))
        },
        done: state.completed,
        texts: bubbles,
        annotations,
        user_match,
    };
    Ok((state, turn))
}

fn record_match(script: &DialogueScript, state: &mut SagSessionState, id: &str) {
    let node = script.node(id).expect("frontier node exists");
    state.matched_nodes.push(id.to_string());
    if node.kind == NodeKind::TherapeuticQuestion {
        state.matched_questions.insert(id.to_string());
    }
    if node.kind == NodeKind::Terminal {
        state.completed = true;
    }
}

/// Opens a session: the backend speaks first from the root.
pub fn sag_start(
    library: &ScriptLibrary,
    topic_id: &str,
    backend: &dyn Backend,
    config: &SagConfig,
) -> Result<(SagSessionState, BotTurn), EngineError> {
    let script = library.get(topic_id)?;
    let state = SagSessionState {
        topic_id: topic_id.to_string(),
        history: Vec::new(),
        frontier: vec![script.root_id().to_string()],
        matched_nodes: Vec::new(),
        matched_questions: BTreeSet::new(),
        completed: false,
    };
    generate(script, state, backend, config, None)
}

/// One user message, one backend call. On error the input state is left as
/// it was.
pub fn sag_step(
    script: &DialogueScript,
    state: &SagSessionState,
    input: &UserInput,
    backend: &dyn Backend,
    config: &SagConfig,
) -> Result<(SagSessionState, BotTurn), EngineError> {
    if state.completed {
        return Err(EngineError::SessionComplete);
    }
    let mut next = state.clone();
    let (text, user_match) = match input {
        UserInput::OptionId(id) => {
            if !offered_options(script, &next).contains(id) {
                return Err(EngineError::InvalidOption {
                    option_id: id.clone(),
                });
            }
            (script.node(id).expect("offered").text.clone(), Some(id.clone()))
        }
        UserInput::Text(t) => {
            let tracked = track_user(script, t, &offered_options(script, &next), config.threshold);
            (t.clone(), tracked.matched_node_id)
        }
    };
    if let Some(option) = &user_match {
        next.matched_nodes.push(option.clone());
        next.frontier = frontier_after(script, option);
    }
    next.history.push(ChatMessage::user(text));
    generate(script, next, backend, config, user_match)
}

/// One supervised example: the conversation so far and the scripted reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetunePair {
    pub topic_id: String,
    pub node_id: String,
    pub context: Vec<ChatMessage>,
    pub target: String,
}

/// One pair per spoken bot node, in depth-first author order per topic.
/// Context messages follow what a rule-based session would show: each bot
/// node as an assistant message, the chosen option label after a branch,
/// and a placeholder where the client answers a question.
pub fn export_finetune_pairs(library: &ScriptLibrary) -> Vec<FinetunePair> {
    let mut pairs = Vec::new();
    for script in library.scripts() {
        let mut stack = vec![(script.root(), Vec::<ChatMessage>::new())];
        while let Some((node, context)) = stack.pop() {
            let mut after = context.clone();
            if !node.text.is_empty() {
                pairs.push(FinetunePair {
                    topic_id: script.topic_id().to_string(),
                    node_id: node.id.clone(),
                    context,
                    target: node.text.clone(),
                });
                after.push(ChatMessage::assistant(node.text.clone()));
            }
            let options = script.options(&node.id);
            if !options.is_empty() {
                for option in options.into_iter().rev() {
                    let mut ctx = after.clone();
                    ctx.push(ChatMessage::user(option.text.clone()));
                    let child = script.children(&option.id).next().expect("validated option");
                    stack.push((child, ctx));
                }
            } else if let Some(next) = script.bot_successor(&node.id) {
                if node.kind == NodeKind::TherapeuticQuestion {
                    after.push(ChatMessage::user(CLIENT_REPLY_PLACEHOLDER));
                }
                stack.push((next, after));
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendError, FreeformMock, ScriptFaithfulMock};
    use crate::script::test_support::script;
    use crate::script::NodeKind::*;

    fn fixture() -> DialogueScript {
        script(&[
            ("q", TherapeuticQuestion, "How confident are you about walking more?", &["opt_1", "opt_2"]),
            ("opt_1", UserOption, "Not very confident", &["r"]),
            ("r", Reflection, "It sounds like walking feels hard right now.", &["q2"]),
            ("q2", TherapeuticQuestion, "What small step could you take this week?", &["end1"]),
            ("end1", Terminal, "Thank you for talking with me.", &[]),
            ("opt_2", UserOption, "Quite confident", &["end2"]),
            ("end2", Terminal, "Great, keep it up.", &[]),
        ])
    }

    fn library(s: DialogueScript) -> ScriptLibrary {
        ScriptLibrary::new("test", [s]).unwrap()
    }

    #[test]
    fn frontier_skips_up_to_two_bot_nodes() {
        let s = fixture();
        assert_eq!(frontier_after(&s, "q"), ["opt_1", "opt_2"]);
        assert_eq!(frontier_after(&s, "opt_1"), ["r", "q2", "end1"]);
        assert_eq!(frontier_after(&s, "r"), ["q2", "end1"]);
        assert!(frontier_after(&s, "end1").is_empty());
    }

    #[test]
    fn tracking_exact_and_unrelated() {
        let s = fixture();
        let frontier = frontier_after(&s, "opt_1");
        let hit = track_position(&s, "It sounds like walking feels hard right now.", &frontier, 0.6);
        assert_eq!(hit.matched_node_id.as_deref(), Some("r"));
        assert_eq!(hit.similarity, 1.0);
        assert_eq!(hit.new_frontier, ["q2", "end1"]);

        let miss = track_position(&s, "totally unrelated weather chat", &frontier, 0.6);
        assert_eq!(miss.matched_node_id, None);
        assert_eq!(miss.new_frontier, frontier);
    }

    #[test]
    fn prompt_lists_next_and_rules() {
        let s = fixture();
        let req = build_sag_prompt(&s, &[], &["q".into()], &SagConfig::default()).unwrap();
        let block = ScriptBlock::find(&req.system_prompt).unwrap();
        assert_eq!(block.nodes.len(), 7);
        assert_eq!(block.header.next, ["q"]);
        assert!(req.system_prompt.contains(CLOSING_MARKER));
        assert_eq!(req.messages, vec![ChatMessage::user(OPENING_CUE)]);
    }

    #[test]
    fn faithful_walk_matches_every_node() {
        let s = fixture();
        let lib = library(s.clone());
        let cfg = SagConfig::default();
        let (state, turn) = sag_start(&lib, "t", &ScriptFaithfulMock, &cfg).unwrap();
        assert_eq!(turn.texts, vec!["How confident are you about walking more?"]);
        assert_eq!(turn.options.len(), 2);
        let (state, _) = sag_step(&s, &state, &UserInput::option("opt_1"), &ScriptFaithfulMock, &cfg).unwrap();
        let (state, turn) = sag_step(&s, &state, &UserInput::text("maybe a walk"), &ScriptFaithfulMock, &cfg).unwrap();
        assert!(turn.done && state.completed);
        assert_eq!(state.matched_nodes, ["q", "opt_1", "r", "q2", "end1"]);
        assert_eq!(state.matched_questions.len(), 2);
    }

    #[test]
    fn freeform_never_matches() {
        let s = fixture();
        let lib = library(s.clone());
        let cfg = SagConfig::default();
        let (mut state, _) = sag_start(&lib, "t", &FreeformMock, &cfg).unwrap();
        for _ in 0..10 {
            state = sag_step(&s, &state, &UserInput::text("ok"), &FreeformMock, &cfg).unwrap().0;
        }
        assert!(state.matched_questions.is_empty());
        assert!(!state.completed);
    }

    struct Down;
    impl Backend for Down {
        fn name(&self) -> &str {
            "down"
        }
        fn complete(&self, _: &CompletionRequest) -> Result<crate::backend::Completion, BackendError> {
            Err(BackendError::Network { attempts: 4, message: "refused".into() })
        }
    }

    #[test]
    fn failing_backend_leaves_state_alone() {
        let s = fixture();
        let lib = library(s.clone());
        let cfg = SagConfig::default();
        let (state, _) = sag_start(&lib, "t", &ScriptFaithfulMock, &cfg).unwrap();
        let before = state.clone();
        let err = sag_step(&s, &state, &UserInput::option("opt_1"), &Down, &cfg).unwrap_err();
        assert!(matches!(err, EngineError::Backend(BackendError::Network { .. })));
        assert_eq!(state, before);
    }

    #[test]
    fn prompt_too_large_when_first_level_overflows() {
        let mut rows: Vec<(String, NodeKind, String, Vec<String>)> = Vec::new();
        let options: Vec<String> = (0..5000).map(|i| format!("o{i}")).collect();
        rows.push(("root".into(), TherapeuticQuestion, "Pick one?".into(), options.clone()));
        for (i, o) in options.iter().enumerate() {
            rows.push((o.clone(), UserOption, format!("Option number {i}"), vec![format!("e{i}")]));
            rows.push((format!("e{i}"), Terminal, "Bye".into(), vec![]));
        }
        assert_eq!(rows.len(), 10_001);
        let borrowed: Vec<(&str, NodeKind, &str, Vec<&str>)> = rows
            .iter()
            .map(|(a, k, t, c)| (a.as_str(), *k, t.as_str(), c.iter().map(String::as_str).collect()))
            .collect();
        let refs: Vec<(&str, NodeKind, &str, &[&str])> =
            borrowed.iter().map(|(a, k, t, c)| (*a, *k, *t, c.as_slice())).collect();
        let big = script(&refs);
        let cfg = SagConfig {
            token_budget: 4000,
            ..SagConfig::default()
        };
        let err = build_sag_prompt(&big, &[], &["root".into()], &cfg).unwrap_err();
        assert!(matches!(err, EngineError::PromptTooLarge { budget: 4000, .. }));
    }

    #[test]
    fn deep_tree_is_truncated_with_marker() {
        let s = fixture();
        let full = build_sag_prompt(&s, &[], &["q".into()], &SagConfig::default()).unwrap();
        let cfg = SagConfig {
            token_budget: estimate_tokens(&full.system_prompt) - 1,
            ..SagConfig::default()
        };
        let cut = build_sag_prompt(&s, &[], &["q".into()], &cfg).unwrap();
        let block = ScriptBlock::find(&cut.system_prompt).unwrap();
        assert!(block.nodes.len() < 7);
        assert!(block.nodes.iter().any(|n| n.note.as_deref() == Some(ELIDED_MARKER)));
    }

    #[test]
    fn finetune_pairs_for_linear_script() {
        let s = script(&[
            ("q1", TherapeuticQuestion, "First?", &["q2"]),
            ("q2", TherapeuticQuestion, "Second?", &["end"]),
            ("end", Terminal, "Done.", &[]),
        ]);
        let pairs = export_finetune_pairs(&library(s));
        let lens: Vec<_> = pairs.iter().map(|p| p.context.len()).collect();
        assert_eq!(lens, [0, 2, 4]);
        assert_eq!(pairs[2].target, "Done.");
        assert_eq!(pairs[1].context[1].text, CLIENT_REPLY_PLACEHOLDER);
        assert!(export_finetune_pairs(&ScriptLibrary::new("e", []).unwrap()).is_empty());
    }
}
