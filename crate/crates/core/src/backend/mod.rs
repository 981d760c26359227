//! Text-generation backends.
//!
//! Engines only see the [`Backend`] trait. One implementation talks to a
//! chat-completions style HTTP endpoint; the others are deterministic and
//! need no network, so every engine can be exercised offline.

mod live;
mod mock;
mod replay;

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use live::{LiveConfig, LiveHttpBackend};
pub use mock::{FreeformMock, ScriptFaithfulMock, FREEFORM_REPLY, NEUTRAL_REFLECTION};
pub use replay::{
    QueueBackend, RecordingBackend, ReplayEntry, ReplayMock, TapBackend, RECORDING_FORMAT,
};

pub const DEFAULT_GENERATION_TEMPERATURE: f64 = 0.7;
pub const PREDICTION_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    Assistant,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

/// One call to a backend. `tag` names the engine step that issued it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: String,
}

impl CompletionRequest {
    /// Merges consecutive messages of the same role (joined by a newline).
    pub fn normalized_messages(&self) -> Vec<ChatMessage> {
        normalize_messages(&self.messages)
    }

    pub fn check(&self) -> Result<(), BackendError> {
        if self.max_tokens == 0 {
            return Err(BackendError::BudgetExceeded { max_tokens: 0 });
        }
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} out of range",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical JSON encoding of the whole request.
    pub fn request_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

pub fn normalize_messages(messages: &[ChatMessage]) -> Vec<ChatMessage> {
    let mut out: Vec<ChatMessage> = Vec::with_capacity(messages.len());
    for m in messages {
        match out.last_mut() {
            Some(last) if last.role == m.role => {
                last.text.push('\n');
                last.text.push_str(&m.text);
            }
            _ => out.push(m.clone()),
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default)]
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("network error after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no recorded response for request {hash} (tag `{tag}`)")]
    ReplayMiss { hash: String, tag: String },
    #[error("token budget exceeded (max_tokens = {max_tokens})")]
    BudgetExceeded { max_tokens: u32 },
    #[error("request hash {hash} maps to two different requests")]
    Collision { hash: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("recording i/o: {0}")]
    Io(String),
}

impl BackendError {
    /// Whether the same call might succeed if repeated later.
    pub fn is_retriable(&self) -> bool {
        match self {
            BackendError::Network { .. } => true,
            BackendError::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

/// A text-generation backend. Implementations are shared across sessions and
/// must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Backend selection as written on the command line or in a create request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendKind {
    LiveHttp { endpoint: String, model_name: String },
    ScriptFaithfulMock,
    FreeformMock,
    ReplayMock { recording_path: PathBuf },
}

impl BackendKind {
    /// `script_faithful`, `freeform`, `replay:<path>` or `live`. `live` takes
    /// its endpoint and model from the environment.
    pub fn parse(name: &str) -> Result<Self, BackendError> {
        match name {
            "script_faithful" => Ok(BackendKind::ScriptFaithfulMock),
            "freeform" => Ok(BackendKind::FreeformMock),
            "live" => {
                let cfg = LiveConfig::from_env()?;
                Ok(BackendKind::LiveHttp {
                    endpoint: cfg.base_url,
                    model_name: cfg.model,
                })
            }
            other => match other.strip_prefix("replay:") {
                Some(path) if !path.is_empty() => Ok(BackendKind::ReplayMock {
                    recording_path: PathBuf::from(path),
                }),
                _ => Err(BackendError::InvalidRequest(format!(
                    "unknown backend `{other}`"
                ))),
            },
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Backend>, BackendError> {
        Ok(match self {
            BackendKind::ScriptFaithfulMock => Arc::new(ScriptFaithfulMock),
            BackendKind::FreeformMock => Arc::new(FreeformMock),
            BackendKind::ReplayMock { recording_path } => {
                Arc::new(ReplayMock::load(recording_path)?)
            }
            BackendKind::LiveHttp {
                endpoint,
                model_name,
            } => {
                let mut cfg = LiveConfig::from_env().unwrap_or_else(|_| LiveConfig::new(endpoint, model_name));
                cfg.base_url = endpoint.clone();
                cfg.model = model_name.clone();
                Arc::new(LiveHttpBackend::new(cfg)?)
            }
        })
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::LiveHttp { .. } => f.write_str("live"),
            BackendKind::ScriptFaithfulMock => f.write_str("script_faithful"),
            BackendKind::FreeformMock => f.write_str("freeform"),
            BackendKind::ReplayMock { recording_path } => {
                write!(f, "replay:{}", recording_path.display())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> CompletionRequest {
        CompletionRequest {
            system_prompt: "sys".into(),
            messages: vec![ChatMessage::user("hi")],
            temperature: 0.7,
            max_tokens: 64,
            tag: "t".into(),
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = request();
        assert_eq!(a.request_hash(), request().request_hash());
        let mut b = request();
        b.tag = "other".into();
        assert_ne!(a.request_hash(), b.request_hash());
        assert_eq!(a.request_hash().len(), 64);
    }

    #[test]
    fn zero_budget_and_empty_messages_rejected() {
        let mut r = request();
        r.max_tokens = 0;
        assert_eq!(r.check(), Err(BackendError::BudgetExceeded { max_tokens: 0 }));
        let mut r = request();
        r.messages.clear();
        assert!(matches!(r.check(), Err(BackendError::InvalidRequest(_))));
    }

    #[test]
    fn normalization_merges_runs() {
        let msgs = vec![
            ChatMessage::assistant("a"),
            ChatMessage::assistant("b"),
            ChatMessage::user("c"),
        ];
        let n = normalize_messages(&msgs);
        assert_eq!(n.len(), 2);
        assert_eq!(n[0].text, "a\nb");
    }

    #[test]
    fn kind_names() {
        assert_eq!(BackendKind::parse("freeform").unwrap(), BackendKind::FreeformMock);
        assert_eq!(
            BackendKind::parse("replay:/tmp/x.jsonl").unwrap().to_string(),
            "replay:/tmp/x.jsonl"
        );
        assert!(BackendKind::parse("gpt").is_err());
    }
}
