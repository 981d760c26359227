use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::script::ScriptError;

/// What the user sent: typed text or a click on an offered option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserInput {
    Text(String),
    OptionId(String),
}

impl UserInput {
    pub fn text(t: impl Into<String>) -> Self {
        UserInput::Text(t.into())
    }

    pub fn option(id: impl Into<String>) -> Self {
        UserInput::OptionId(id.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionButton {
    pub option_id: String,
    pub label: String,
}

/// Per-bubble metadata: which script node the bubble delivered and under
/// which strategy it was produced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BubbleAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_node_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
}

/// Everything the bot says in response to one user message.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BotTurn {
    pub texts: Vec<String>,
    pub options: Vec<OptionButton>,
    pub done: bool,
    /// Aligned with `texts`.
    #[serde(default)]
    pub annotations: Vec<BubbleAnnotation>,
    /// UserOption node the preceding user message was resolved to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_match: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("session is already complete")]
    SessionComplete,
    #[error("option `{option_id}` is not offered here")]
    InvalidOption { option_id: String },
    #[error("choice {position} is invalid ({})", .option_id.as_deref().unwrap_or("missing"))]
    InvalidChoice {
        position: usize,
        option_id: Option<String>,
    },
    #[error("prompt does not fit the token budget even at depth 1 ({needed} > {budget} tokens)")]
    PromptTooLarge { needed: usize, budget: usize },
    #[error("retrieval is only defined for question and information strategies")]
    WrongStrategy,
    #[error("unknown label map `{0}`")]
    UnknownLabelMap(String),
    #[error("invalid label map: {0}")]
    InvalidLabelMap(String),
    #[error("strategy prediction needs at least one user turn")]
    EmptyHistory,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl From<ScriptError> for EngineError {
    fn from(e: ScriptError) -> Self {
        match e {
            ScriptError::UnknownTopic(t) => EngineError::UnknownTopic(t),
            other => EngineError::UnknownTopic(other.to_string()),
        }
    }
}
