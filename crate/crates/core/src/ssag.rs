//! Strategy-then-content generation.
//!
//! Each step first asks the backend which therapist behaviour should come
//! next. Questions and information are then taken from the script and only
//! phrased by the backend; reflections are generated freely without any
//! script text in the prompt.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backend::{
    Backend, ChatMessage, CompletionRequest, Role, DEFAULT_GENERATION_TEMPERATURE,
    PREDICTION_TEMPERATURE,
};
use crate::context::{split_reply, ContextNode, ScriptBlock, ScriptBlockHeader, StrategyBlock};
use crate::metrics::{best_line_similarity, fuzzy_similarity, DEFAULT_MATCH_THRESHOLD};
use crate::prompt;
use crate::rule::bot_chain;
use crate::script::{DialogueScript, NodeKind, ScriptLibrary};
use crate::strategy::{LabelMap, LabelMapConfig, StrategyLabel};
use crate::turn::{BotTurn, BubbleAnnotation, EngineError, UserInput};

const NUDGE_TEXT: &str =
    "The client has not been asked a question for several turns; a question is probably due.";
const RETRY_NOTE: &str =
    " Your previous draft did not contain the expert text. This time include it word for word.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsagConfig {
    /// Post-check threshold for delivered expert content.
    pub threshold: f64,
    /// Threshold for resolving a branch from the client's free text.
    pub branch_threshold: f64,
    /// Number of most recent messages shown to the strategy predictor.
    pub history_window: usize,
    /// Non-question turns after which the predictor is nudged.
    pub nudge_after: u32,
    pub label_map: LabelMap,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for SsagConfig {
    fn default() -> Self {
        SsagConfig {
            threshold: DEFAULT_MATCH_THRESHOLD,
            branch_threshold: 0.4,
            history_window: 8,
            nudge_after: 3,
            label_map: crate::strategy::load_label_map(&LabelMapConfig::Named("core3".into()))
                .expect("built-in map loads"),
            temperature: DEFAULT_GENERATION_TEMPERATURE,
            max_tokens: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsagSessionState {
    pub topic_id: String,
    pub history: Vec<ChatMessage>,
    /// Questions on the known part of the path not yet posed, script order.
    pub pending_questions: Vec<String>,
    /// Information and advice nodes not yet given.
    pub info_pool: Vec<String>,
    /// Every expert node delivered so far.
    pub posed: BTreeSet<String>,
    /// `posed` in delivery order.
    pub delivered: Vec<String>,
    /// Options taken at branches, in order.
    pub choices: Vec<String>,
    /// Last node of the known path: a branching node or the terminal.
    pub path_end: String,
    pub non_question_streak: u32,
    pub completed: bool,
}

impl SsagSessionState {
    /// True once every question is posed and only the closing remains.
    pub fn closing_due(&self, script: &DialogueScript) -> bool {
        !self.completed
            && self.pending_questions.is_empty()
            && script
                .node(&self.path_end)
                .is_some_and(|n| n.kind == NodeKind::Terminal)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyPrediction {
    pub labels: Vec<StrategyLabel>,
    pub raw_text: String,
    /// Set when nothing could be parsed and the reflection fallback was used.
    pub warning: bool,
}

impl StrategyPrediction {
    /// The label acted on: ask before inform before reflect.
    pub fn chosen(&self) -> &StrategyLabel {
        self.labels
            .iter()
            .min_by_key(|l| l.priority())
            .expect("prediction has a label")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertContent {
    pub node_id: String,
    pub text: String,
}

/// Questions and information on the straight run of bot nodes from
/// `start`, and the node where the run stops.
fn segment(script: &DialogueScript, start: &str) -> (Vec<String>, Vec<String>, String) {
    let mut questions = Vec::new();
    let mut info = Vec::new();
    let mut node = script.node(start).expect("segment start exists");
    loop {
        match node.kind {
            NodeKind::TherapeuticQuestion => questions.push(node.id.clone()),
            k if k.is_informational() => info.push(node.id.clone()),
            _ => {}
        }
        if node.kind == NodeKind::Terminal || !script.options(&node.id).is_empty() {
            return (questions, info, node.id.clone());
        }
        match script.bot_successor(&node.id) {
            Some(next) => node = next,
            None => return (questions, info, node.id.clone()),
        }
    }
}

fn extend_path(script: &DialogueScript, state: &mut SsagSessionState, start: &str) {
    let (questions, info, end) = segment(script, start);
    state
        .pending_questions
        .extend(questions.into_iter().filter(|q| !state.posed.contains(q)));
    state
        .info_pool
        .extend(info.into_iter().filter(|i| !state.posed.contains(i)));
    state.path_end = end;
}

fn mark_delivered(state: &mut SsagSessionState, id: &str) {
    if state.posed.insert(id.to_string()) {
        state.delivered.push(id.to_string());
    }
    state.pending_questions.retain(|q| q != id);
    state.info_pool.retain(|i| i != id);
}

/// Picks a branch for every branching node reached while no question is
/// pending. Returns the first option taken.
fn resolve_branches(
    script: &DialogueScript,
    state: &mut SsagSessionState,
    user_text: &str,
    threshold: f64,
) -> Option<String> {
    let mut first = None;
    while state.pending_questions.is_empty() {
        let options = script.options(&state.path_end);
        if options.is_empty() {
            break;
        }
        let mut best = (options[0], f64::NEG_INFINITY);
        for option in &options {
            let sim = fuzzy_similarity(user_text, &option.text);
            if sim > best.1 {
                best = (option, sim);
            }
        }
        let chosen = if best.1 >= threshold { best.0 } else { options[0] };
        state.choices.push(chosen.id.clone());
        first.get_or_insert_with(|| chosen.id.clone());
        let next = script.children(&chosen.id).next().expect("validated option");
        extend_path(script, state, &next.id);
    }
    first
}

/// Opens a session with the scripted opening spoken verbatim, without a
/// backend call.
pub fn ssag_start(library: &ScriptLibrary, topic_id: &str) -> Result<(SsagSessionState, BotTurn), EngineError> {
    let script = library.get(topic_id)?;
    Ok(ssag_start_script(script))
}

pub fn ssag_start_script(script: &DialogueScript) -> (SsagSessionState, BotTurn) {
    let mut state = SsagSessionState {
        topic_id: script.topic_id().to_string(),
        history: Vec::new(),
        pending_questions: Vec::new(),
        info_pool: Vec::new(),
        posed: BTreeSet::new(),
        delivered: Vec::new(),
        choices: Vec::new(),
        path_end: script.root_id().to_string(),
        non_question_streak: 0,
        completed: false,
    };
    extend_path(script, &mut state, script.root_id());

    let mut turn = BotTurn::default();
    for node in bot_chain(script, script.root()) {
        let expert = node.kind == NodeKind::TherapeuticQuestion || node.kind.is_informational();
        if expert {
            mark_delivered(&mut state, &node.id);
        }
        if node.kind == NodeKind::Terminal {
            mark_delivered(&mut state, &node.id);
            state.completed = true;
        }
        if !node.text.is_empty() {
            turn.texts.push(node.text.clone());
            turn.annotations.push(BubbleAnnotation {
                matched_node_id: (expert || node.kind == NodeKind::Terminal).then(|| node.id.clone()),
                strategy: None,
            });
        }
    }
    turn.done = state.completed;
    if !turn.texts.is_empty() {
        state.history.push(ChatMessage::assistant(turn.texts.join("\n")));
    }
    (state, turn)
}

fn label_list(map: &LabelMap) -> String {
    map.canonical_codes()
        .iter()
        .map(|c| format!("- {c}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Builds the classification request. `pending_questions` and
/// `info_available` describe the session so the predictor can tell what is
/// still to come.
pub fn build_predict_request(
    history: &[ChatMessage],
    map: &LabelMap,
    pending_questions: usize,
    info_available: bool,
    non_question_streak: u32,
    config: &SsagConfig,
) -> Result<CompletionRequest, EngineError> {
    if !history.iter().any(|m| m.role == Role::User) {
        return Err(EngineError::EmptyHistory);
    }
    let nudge = non_question_streak >= config.nudge_after;
    let block = StrategyBlock {
        labels: map.canonical_codes(),
        multi_label: map.multi_label,
        pending_questions,
        info_available,
        non_question_streak,
        nudge,
    };
    let shape = if map.multi_label {
        "one or more labels separated by semicolons"
    } else {
        "exactly one label"
    };
    let system = prompt::render(
        prompt::SSAG_PREDICT,
        &[
            ("answer_shape", shape),
            ("label_list", &label_list(map)),
            ("nudge", if nudge { NUDGE_TEXT } else { "" }),
            ("context", &block.render()),
        ],
    );
    let window = history.len().saturating_sub(config.history_window);
    Ok(CompletionRequest {
        system_prompt: system,
        messages: history[window..].to_vec(),
        temperature: PREDICTION_TEMPERATURE,
        max_tokens: 20,
        tag: "ssag.predict".into(),
    })
}

/// Parses the backend's answer; unrecognizable output becomes a flagged
/// reflection.
pub fn parse_prediction(raw_text: String, map: &LabelMap) -> StrategyPrediction {
    let labels = map.parse(&raw_text);
    if labels.is_empty() {
        tracing::warn!(raw = %raw_text, "unparseable strategy prediction, reflecting");
        StrategyPrediction {
            labels: vec![StrategyLabel::ReflectiveListening],
            raw_text,
            warning: true,
        }
    } else {
        StrategyPrediction {
            labels,
            raw_text,
            warning: false,
        }
    }
}

/// One prediction call without session bookkeeping.
pub fn predict_strategy(
    history: &[ChatMessage],
    backend: &dyn Backend,
    map: &LabelMap,
) -> Result<StrategyPrediction, EngineError> {
    let config = SsagConfig::default();
    let request = build_predict_request(history, map, 0, false, 0, &config)?;
    let reply = backend.complete(&request)?;
    Ok(parse_prediction(reply.text, map))
}

/// The expert node a strategy would deliver next. Does not change `state`.
pub fn retrieve_expert_content(
    script: &DialogueScript,
    state: &SsagSessionState,
    strategy: &StrategyLabel,
) -> Result<Option<ExpertContent>, EngineError> {
    let id = match strategy {
        StrategyLabel::AskQuestion => state.pending_questions.first().cloned(),
        StrategyLabel::GiveInformation => {
            let last_user = state
                .history
                .iter()
                .rev()
                .find(|m| m.role == Role::User)
                .map(|m| m.text.as_str())
                .unwrap_or("");
            let mut best: Option<(&String, f64)> = None;
            for id in &state.info_pool {
                let text = script.node(id).map_or("", |n| n.text.as_str());
                let sim = fuzzy_similarity(last_user, text);
                if best.is_none_or(|(_, b)| sim > b) {
                    best = Some((id, sim));
                }
            }
            best.map(|(id, _)| id.clone())
        }
        _ => return Err(EngineError::WrongStrategy),
    };
    Ok(id.and_then(|id| {
        script.node(&id).map(|n| ExpertContent {
            node_id: id,
            text: n.text.clone(),
        })
    }))
}

fn content_kind(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::TherapeuticQuestion => "question",
        NodeKind::Terminal => "closing message",
        _ => "information",
    }
}

fn render_request(
    script: &DialogueScript,
    history: &[ChatMessage],
    node_id: &str,
    retry: bool,
    config: &SsagConfig,
) -> CompletionRequest {
    let node = script.node(node_id).expect("expert node exists");
    let block = ScriptBlock {
        header: ScriptBlockHeader {
            topic_id: script.topic_id().to_string(),
            next: vec![node_id.to_string()],
            max_depth: None,
        },
        nodes: vec![ContextNode {
            depth: 0,
            id: node_id.to_string(),
            kind: node.kind,
            text: node.text.clone(),
            children: Vec::new(),
            note: None,
        }],
    };
    let system = prompt::render(
        prompt::SSAG_RENDER,
        &[
            ("title", script.title()),
            ("content_kind", content_kind(node.kind)),
            ("retry_note", if retry { RETRY_NOTE } else { "" }),
            ("context", &block.render()),
        ],
    );
    CompletionRequest {
        system_prompt: system,
        messages: history.to_vec(),
        temperature: config.temperature,
        max_tokens: config.max_tokens,
        tag: "ssag.render".into(),
    }
}

/// Phrases one expert node, checking that its text made it into the reply.
/// After one failed retry the text is used verbatim.
fn deliver(
    script: &DialogueScript,
    history: &[ChatMessage],
    node_id: &str,
    backend: &dyn Backend,
    config: &SsagConfig,
) -> Result<Vec<String>, EngineError> {
    let target = &script.node(node_id).expect("expert node exists").text;
    if target.is_empty() {
        return Ok(Vec::new());
    }
    for retry in [false, true] {
        let reply = backend.complete(&render_request(script, history, node_id, retry, config))?;
        if best_line_similarity(&reply.text, target) >= config.threshold {
            let (bubbles, _) = split_reply(&reply.text);
            if !bubbles.is_empty() {
                return Ok(bubbles);
            }
        }
    }
    tracing::info!(node_id, "expert content not reproduced, using script text");
    Ok(vec![target.clone()])
}

fn reflect(
    script: &DialogueScript,
    history: &[ChatMessage],
    backend: &dyn Backend,
    config: &SsagConfig,
) -> Result<Vec<String>, EngineError> {
    let request = CompletionRequest {
        system_prompt: prompt::render(prompt::SSAG_REFLECT, &[("title", script.title())]),
        messages: history.to_vec(),
        temperature: config.temperature,
        max_tokens: config.max_tokens,
        tag: "ssag.reflect".into(),
    };
    let reply = backend.complete(&request)?;
    Ok(split_reply(&reply.text).0)
}

/// One client message: predict, then deliver expert content or reflect.
/// The input state is never modified; on error nothing is committed.
pub fn ssag_step(
    script: &DialogueScript,
    state: &SsagSessionState,
    input: &UserInput,
    backend: &dyn Backend,
    config: &SsagConfig,
) -> Result<(SsagSessionState, BotTurn), EngineError> {
    if state.completed {
        return Err(EngineError::SessionComplete);
    }
    let text = match input {
        UserInput::Text(t) => t.clone(),
        UserInput::OptionId(id) => {
            return Err(EngineError::InvalidOption {
                option_id: id.clone(),
            })
        }
    };
    let mut next = state.clone();
    next.history.push(ChatMessage::user(text.clone()));
    let user_match = resolve_branches(script, &mut next, &text, config.branch_threshold);

    let map = &config.label_map;
    let pending = next.pending_questions.len() + usize::from(next.closing_due(script));
    let request = build_predict_request(
        &next.history,
        map,
        pending,
        !next.info_pool.is_empty(),
        next.non_question_streak,
        config,
    )?;
    let prediction = parse_prediction(backend.complete(&request)?.text, map);
    let chosen = prediction.chosen().clone();

    let expert = match chosen {
        StrategyLabel::AskQuestion => retrieve_expert_content(script, &next, &chosen)?
            .map(|c| c.node_id)
            .or_else(|| next.closing_due(script).then(|| next.path_end.clone())),
        StrategyLabel::GiveInformation => {
            retrieve_expert_content(script, &next, &chosen)?.map(|c| c.node_id)
        }
        _ => None,
    };

    let mut annotations = Vec::new();
    let bubbles = match &expert {
        Some(id) => {
            let bubbles = deliver(script, &next.history, id, backend, config)?;
            let target = &script.node(id).expect("expert node").text;
            let best = bubbles
                .iter()
                .enumerate()
                .max_by(|a, b| {
                    fuzzy_similarity(a.1, target)
                        .total_cmp(&fuzzy_similarity(b.1, target))
                        .then(b.0.cmp(&a.0))
                })
                .map(|(i, _)| i);
            for i in 0..bubbles.len() {
                annotations.push(BubbleAnnotation {
                    matched_node_id: (Some(i) == best).then(|| id.clone()),
                    strategy: Some(chosen.to_string()),
                });
            }
            let kind = script.node(id).expect("expert node").kind;
            mark_delivered(&mut next, id);
            if kind == NodeKind::Terminal {
                next.completed = true;
            }
            next.non_question_streak = match kind {
                NodeKind::TherapeuticQuestion | NodeKind::Terminal => 0,
                _ => next.non_question_streak + 1,
            };
            bubbles
        }
        None => {
            let bubbles = reflect(script, &next.history, backend, config)?;
            annotations = bubbles
                .iter()
                .map(|_| BubbleAnnotation {
                    matched_node_id: None,
                    strategy: Some(StrategyLabel::ReflectiveListening.to_string()),
                })
                .collect();
            next.non_question_streak += 1;
            bubbles
        }
    };
    if !bubbles.is_empty() {
        next.history.push(ChatMessage::assistant(bubbles.join("\n")));
    }
    let turn = BotTurn {
        texts: bubbles,
        options: Vec::new(),
        done: next.completed,
        annotations,
        user_match,
    };
    Ok((next, turn))
}
