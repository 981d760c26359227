//! One entry point for all four conditions.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::pure::{pure_start, pure_step, PureConfig, PureSessionState};
use crate::rule::{rule_step, start_topic, RuleSessionState};
use crate::sag::{sag_start, sag_step, SagConfig, SagSessionState};
use crate::script::{DialogueScript, ScriptLibrary};
use crate::ssag::{ssag_start, ssag_step, SsagConfig, SsagSessionState};
use crate::transcript::{Condition, Transcript};
use crate::turn::{BotTurn, EngineError, UserInput};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    #[serde(default)]
    pub sag: SagConfig,
    #[serde(default)]
    pub ssag: SsagConfig,
    #[serde(default)]
    pub pure: PureConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "condition", content = "state", rename_all = "snake_case")]
pub enum EngineState {
    RuleBased(RuleSessionState),
    PureLlm(PureSessionState),
    SagPrompt(SagSessionState),
    Ssag(SsagSessionState),
}

impl EngineState {
    pub fn condition(&self) -> Condition {
        match self {
            EngineState::RuleBased(_) => Condition::RuleBased,
            EngineState::PureLlm(_) => Condition::PureLlm,
            EngineState::SagPrompt(_) => Condition::SagPrompt,
            EngineState::Ssag(_) => Condition::Ssag,
        }
    }

    pub fn topic_id(&self) -> &str {
        match self {
            EngineState::RuleBased(s) => &s.topic_id,
            EngineState::PureLlm(s) => &s.topic_id,
            EngineState::SagPrompt(s) => &s.topic_id,
            EngineState::Ssag(s) => &s.topic_id,
        }
    }

    pub fn completed(&self) -> bool {
        match self {
            EngineState::RuleBased(s) => s.completed,
            EngineState::PureLlm(s) => s.completed,
            EngineState::SagPrompt(s) => s.completed,
            EngineState::Ssag(s) => s.completed,
        }
    }
}

/// Produces the opening bot turn. The rule-based condition ignores `backend`.
pub fn start_session(
    library: &ScriptLibrary,
    condition: Condition,
    topic_id: &str,
    backend: &dyn Backend,
    config: &EngineConfig,
) -> Result<(EngineState, BotTurn), EngineError> {
    Ok(match condition {
        Condition::RuleBased => {
            let (s, t) = start_topic(library, topic_id)?;
            (EngineState::RuleBased(s), t)
        }
        Condition::PureLlm => {
            let (s, t) = pure_start(library, topic_id, backend, &config.pure)?;
            (EngineState::PureLlm(s), t)
        }
        Condition::SagPrompt => {
            let (s, t) = sag_start(library, topic_id, backend, &config.sag)?;
            (EngineState::SagPrompt(s), t)
        }
        Condition::Ssag => {
            let (s, t) = ssag_start(library, topic_id)?;
            (EngineState::Ssag(s), t)
        }
    })
}

/// Advances a session by one user message. `state` is left untouched.
pub fn step_session(
    library: &ScriptLibrary,
    state: &EngineState,
    input: &UserInput,
    backend: &dyn Backend,
    config: &EngineConfig,
) -> Result<(EngineState, BotTurn), EngineError> {
    let script = library.get(state.topic_id())?;
    Ok(match state {
        EngineState::RuleBased(s) => {
            let (s, t) = rule_step(script, s, input)?;
            (EngineState::RuleBased(s), t)
        }
        EngineState::PureLlm(s) => {
            let (s, t) = pure_step(script, s, input, backend, &config.pure)?;
            (EngineState::PureLlm(s), t)
        }
        EngineState::SagPrompt(s) => {
            let (s, t) = sag_step(script, s, input, backend, &config.sag)?;
            (EngineState::SagPrompt(s), t)
        }
        EngineState::Ssag(s) => {
            let (s, t) = ssag_step(script, s, input, backend, &config.ssag)?;
            (EngineState::Ssag(s), t)
        }
    })
}

/// What the user's message reads as in a transcript: option clicks show
/// their label.
pub fn input_text(script: &DialogueScript, input: &UserInput) -> String {
    match input {
        UserInput::Text(t) => t.clone(),
        UserInput::OptionId(id) => script.node(id).map_or_else(|| id.clone(), |n| n.text.clone()),
    }
}

/// Appends one bubble per bot text, all stamped `at`.
pub fn record_bot_turn(transcript: &mut Transcript, turn: &BotTurn, at: DateTime<Utc>) {
    for (i, text) in turn.texts.iter().enumerate() {
        transcript.push_bot(text.clone(), turn.annotations.get(i).cloned().unwrap_or_default(), at);
    }
    transcript.completed |= turn.done;
}
