//! Unaligned baseline: the backend only knows the topic title.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ChatMessage, CompletionRequest, DEFAULT_GENERATION_TEMPERATURE};
use crate::context::{split_reply, CLOSING_MARKER};
use crate::prompt;
use crate::sag::OPENING_CUE;
use crate::script::{DialogueScript, ScriptLibrary};
use crate::turn::{BotTurn, BubbleAnnotation, EngineError, UserInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureConfig {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for PureConfig {
    fn default() -> Self {
        PureConfig {
            temperature: DEFAULT_GENERATION_TEMPERATURE,
            max_tokens: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PureSessionState {
    pub topic_id: String,
    pub history: Vec<ChatMessage>,
    pub completed: bool,
}

pub fn build_pure_prompt(script: &DialogueScript, history: &[ChatMessage], config: &PureConfig) -> CompletionRequest {
    let messages = if history.is_empty() {
        vec![ChatMessage::user(OPENING_CUE)]
    } else {
        history.to_vec()
    };
    CompletionRequest {
        system_prompt: prompt::render(
            prompt::PURE_SYSTEM,
            &[("title", script.title()), ("closing_marker", CLOSING_MARKER)],
        ),
        messages,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
        tag: "pure.generate".into(),
    }
}

fn generate(
    script: &DialogueScript,
    mut state: PureSessionState,
    backend: &dyn Backend,
    config: &PureConfig,
) -> Result<(PureSessionState, BotTurn), EngineError> {
    let reply = backend.complete(&build_pure_prompt(script, &state.history, config))?;
    let (texts, closed) = split_reply(&reply.text);
    state.completed = closed;
    state.history.push(ChatMessage::assistant(texts.join("\n")));
    let turn = BotTurn {
        annotations: vec![BubbleAnnotation::default(); texts.len()],
        texts,
        options: Vec::new(),
        done: closed,
        user_match: None,
    };
    Ok((state, turn))
}

pub fn pure_start(
    library: &ScriptLibrary,
    topic_id: &str,
    backend: &dyn Backend,
    config: &PureConfig,
) -> Result<(PureSessionState, BotTurn), EngineError> {
    let script = library.get(topic_id)?;
    let state = PureSessionState {
        topic_id: topic_id.to_string(),
        history: Vec::new(),
        completed: false,
    };
    generate(script, state, backend, config)
}

pub fn pure_step(
    script: &DialogueScript,
    state: &PureSessionState,
    input: &UserInput,
    backend: &dyn Backend,
    config: &PureConfig,
) -> Result<(PureSessionState, BotTurn), EngineError> {
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
    next.history.push(ChatMessage::user(text));
    generate(script, next, backend, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{QueueBackend, FREEFORM_REPLY};
    use crate::context::ScriptBlock;
    use crate::script::test_support::script;
    use crate::script::NodeKind::*;

    #[test]
    fn prompt_has_no_script_content() {
        let s = script(&[
            ("q", TherapeuticQuestion, "What does a good week look like?", &["e"]),
            ("e", Terminal, "Bye now.", &[]),
        ]);
        let req = build_pure_prompt(&s, &[], &PureConfig::default());
        assert!(ScriptBlock::find(&req.system_prompt).is_none());
        assert!(!req.system_prompt.contains("good week"));
        assert!(req.system_prompt.contains(s.title()));
    }

    #[test]
    fn completes_only_on_marker() {
        let s = script(&[("q", TherapeuticQuestion, "Q?", &["e"]), ("e", Terminal, "Bye.", &[])]);
        let lib = ScriptLibrary::new("t", [s.clone()]).unwrap();
        let backend = QueueBackend::new([
            FREEFORM_REPLY.to_string(),
            "Good talk.\n[TOPIC_COMPLETE]".to_string(),
        ]);
        let cfg = PureConfig::default();
        let (state, turn) = pure_start(&lib, "t", &backend, &cfg).unwrap();
        assert!(!turn.done);
        let (state, turn) = pure_step(&s, &state, &UserInput::text("ok"), &backend, &cfg).unwrap();
        assert!(turn.done && state.completed);
        assert_eq!(turn.texts, vec!["Good talk."]);
    }
}
