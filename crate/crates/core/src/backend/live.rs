use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Completion, CompletionRequest, Role, Usage};

pub const ENV_API_BASE: &str = "LLM_API_BASE";
pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_MODEL: &str = "LLM_MODEL";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub retries: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        LiveConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            retries: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let base = var(ENV_API_BASE)
            .ok_or_else(|| BackendError::InvalidRequest(format!("{ENV_API_BASE} is not set")))?;
        let model = var(ENV_MODEL)
            .ok_or_else(|| BackendError::InvalidRequest(format!("{ENV_MODEL} is not set")))?;
        let mut cfg = LiveConfig::new(base, model);
        cfg.api_key = var(ENV_API_KEY);
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u32>,
    completion_tokens: Option<u32>,
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::Assistant => "assistant",
        Role::User => "user",
    }
}

/// Client for a `POST {base}/chat/completions` endpoint.
///
/// Transport failures, 429 and 5xx answers are retried with exponential backoff;
/// any other HTTP error is returned immediately.
pub struct LiveHttpBackend {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    name: String,
}

impl LiveHttpBackend {
    pub fn new(config: LiveConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Network {
                attempts: 0,
                message: e.to_string(),
            })?;
        let name = format!("live:{}", config.model);
        Ok(LiveHttpBackend {
            config,
            client,
            name,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Result<Completion, Attempt> {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(Attempt::Fail(BackendError::Http {
                status: status.as_u16(),
                body,
            }));
        }
        let parsed: WireResponse = resp
            .json()
            .map_err(|e| Attempt::Fail(BackendError::Protocol(e.to_string())))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| Attempt::Fail(BackendError::Protocol("empty completion".into())))?;
        let usage = parsed
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(Completion { text, usage })
    }
}

enum Attempt {
    Retry(String),
    Fail(BackendError),
}

impl Backend for LiveHttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        request.check()?;
        let mut messages = vec![WireMessage {
            role: "system",
            content: &request.system_prompt,
        }];
        messages.extend(request.messages.iter().map(|m| WireMessage {
            role: role_name(m.role),
            content: &m.text,
        }));
        let body = WireRequest {
            model: &self.config.model,
            messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };

        let mut backoff = self.config.initial_backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(c) => return Ok(c),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    if attempts > self.config.retries {
                        return Err(BackendError::Network { attempts, message });
                    }
                    tracing::warn!(attempts, %message, "retrying completion request");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }
}
