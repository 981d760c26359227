//! Rule-based condition: walks the script verbatim, offering user options as
//! buttons.

use serde::{Deserialize, Serialize};

use crate::script::{DialogueScript, NodeKind, ScriptLibrary, ScriptNode};
use crate::turn::{BotTurn, BubbleAnnotation, EngineError, OptionButton, UserInput};

/// Shown when free text arrives while options are on screen.
pub const REPROMPT: &str = "Please choose one of the options below.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSessionState {
    pub topic_id: String,
    pub current_node_id: String,
    pub path_so_far: Vec<String>,
    pub completed: bool,
}

/// Bot nodes spoken in one turn starting at `start`: the chain continues
/// through reflections, information and advice with a single bot child and
/// stops after a question, before options, or at a terminal.
pub fn bot_chain<'a>(script: &'a DialogueScript, start: &'a ScriptNode) -> Vec<&'a ScriptNode> {
    let mut chain = vec![start];
    let mut node = start;
    while !matches!(node.kind, NodeKind::TherapeuticQuestion | NodeKind::Terminal) {
        match script.bot_successor(&node.id) {
            Some(next) => {
                chain.push(next);
                node = next;
            }
            None => break,
        }
    }
    chain
}

/// Buttons for the options under `node_id`, in author order.
pub fn option_buttons(script: &DialogueScript, node_id: &str) -> Vec<OptionButton> {
    script
        .options(node_id)
        .into_iter()
        .map(|o| OptionButton {
            option_id: o.id.clone(),
            label: o.text.clone(),
        })
        .collect()
}

fn speak(
    script: &DialogueScript,
    mut state: RuleSessionState,
    start: &ScriptNode,
    user_match: Option<String>,
) -> (RuleSessionState, BotTurn) {
    let chain = bot_chain(script, start);
    let last = chain.last().expect("chain has a start");
    let mut turn = BotTurn {
        user_match,
        ..BotTurn::default()
    };
    for node in &chain {
        state.path_so_far.push(node.id.clone());
        if !node.text.is_empty() {
            turn.texts.push(node.text.clone());
            turn.annotations.push(BubbleAnnotation {
                matched_node_id: Some(node.id.clone()),
                strategy: None,
            });
        }
    }
    state.current_node_id = last.id.clone();
    state.completed = last.kind == NodeKind::Terminal;
    turn.done = state.completed;
    if !turn.done {
        turn.options = option_buttons(script, &last.id);
    }
    (state, turn)
}

pub fn start_topic(
    library: &ScriptLibrary,
    topic_id: &str,
) -> Result<(RuleSessionState, BotTurn), EngineError> {
    let script = library.get(topic_id)?;
    Ok(start_script(script))
}

pub fn start_script(script: &DialogueScript) -> (RuleSessionState, BotTurn) {
    let state = RuleSessionState {
        topic_id: script.topic_id().to_string(),
        current_node_id: script.root_id().to_string(),
        path_so_far: Vec::new(),
        completed: false,
    };
    speak(script, state, script.root(), None)
}

pub fn rule_step(
    script: &DialogueScript,
    state: &RuleSessionState,
    input: &UserInput,
) -> Result<(RuleSessionState, BotTurn), EngineError> {
    if state.completed {
        return Err(EngineError::SessionComplete);
    }
    let options = script.options(&state.current_node_id);
    if !options.is_empty() {
        return match input {
            UserInput::OptionId(id) => {
                let option = options
                    .iter()
                    .find(|o| &o.id == id)
                    .ok_or_else(|| EngineError::InvalidOption {
                        option_id: id.clone(),
                    })?;
                let next = script
                    .children(&option.id)
                    .next()
                    .expect("validated option has a child");
                let mut state = state.clone();
                state.path_so_far.push(option.id.clone());
                Ok(speak(script, state, next, Some(option.id.clone())))
            }
            UserInput::Text(_) => Ok((
                state.clone(),
                BotTurn {
                    texts: vec![REPROMPT.to_string()],
                    options: option_buttons(script, &state.current_node_id),
                    annotations: vec![BubbleAnnotation::default()],
                    ..BotTurn::default()
                },
            )),
        };
    }
    match input {
        UserInput::OptionId(id) => Err(EngineError::InvalidOption {
            option_id: id.clone(),
        }),
        UserInput::Text(_) => {
            let next = script
                .bot_successor(&state.current_node_id)
                .expect("validated non-terminal node continues");
            Ok(speak(script, state.clone(), next, None))
        }
    }
}

/// The path a rule-based session takes for the given option choices.
/// Choices past the terminal are ignored.
pub fn oracle_path(script: &DialogueScript, choices: &[String]) -> Result<Vec<String>, EngineError> {
    let mut path = Vec::new();
    let mut used = 0;
    let mut node = script.root();
    loop {
        path.push(node.id.clone());
        let options = script.options(&node.id);
        node = if !options.is_empty() {
            let choice = choices.get(used).ok_or(EngineError::InvalidChoice {
                position: used,
                option_id: None,
            })?;
            let option = options
                .iter()
                .find(|o| &o.id == choice)
                .ok_or_else(|| EngineError::InvalidChoice {
                    position: used,
                    option_id: Some(choice.clone()),
                })?;
            used += 1;
            path.push(option.id.clone());
            script.children(&option.id).next().expect("validated option")
        } else {
            match script.children(&node.id).next() {
                Some(child) => child,
                None => return Ok(path),
            }
        };
    }
}
