//! Chat-completion clients.
//!
//! Wire format: `POST {"system": "...", "messages": [{"role", "content"}]}`
//! answered by `{"reply": "..."}`.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{bearer_token, map_ureq_error};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("language model request timed out")]
    Timeout,
    #[error("language model returned HTTP {0}")]
    Status(u16),
    #[error("language model unreachable: {0}")]
    Transport(String),
    #[error("malformed language model response: {0}")]
    Decode(String),
    #[error("scripted model has no replies left")]
    ScriptExhausted,
    #[error("cannot read stub script {path}: {reason}")]
    Script { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    reply: String,
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Clone)]
pub struct HttpChatClient {
    endpoint: String,
    auth_token_env: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(
        endpoint: impl Into<String>,
        auth_token_env: Option<String>,
        timeout: Duration,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            auth_token_env,
            agent,
        }
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = bearer_token(self.auth_token_env.as_deref()) {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = req
            .send_json(request)
            .map_err(|e| match map_ureq_error(e) {
                (true, _, _) => LlmError::Timeout,
                (_, Some(code), _) => LlmError::Status(code),
                (_, None, msg) => LlmError::Transport(msg),
            })?;
        let body: ChatResponse =
            response
                .body_mut()
                .read_json()
                .map_err(|e| match map_ureq_error(e) {
                    (true, _, _) => LlmError::Timeout,
                    (_, _, msg) => LlmError::Decode(msg),
                })?;
        Ok(body.reply)
    }
}

/// Replays canned replies in order.
///
/// A reply of `@echo` returns the request's system message and last user
/// message; `@timeout` fails with [`LlmError::Timeout`].
#[derive(Debug, Default)]
pub struct ScriptedChatClient {
    replies: Mutex<VecDeque<String>>,
}

pub const ECHO_DIRECTIVE: &str = "@echo";
pub const TIMEOUT_DIRECTIVE: &str = "@timeout";

impl ScriptedChatClient {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
        }
    }

    /// One reply per non-empty line; lines starting with `#` are skipped.
    pub fn from_script(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim_end)
                .filter(|l| !l.trim().is_empty() && !l.starts_with('#')),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Script {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self::from_script(&text))
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("script lock").len()
    }
}

impl ChatClient for ScriptedChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let next = self
            .replies
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or(LlmError::ScriptExhausted)?;
        match next.as_str() {
            ECHO_DIRECTIVE => {
                let user = request
                    .messages
                    .iter()
                    .rev()
                    .find(|m| m.role == "user")
                    .map(|m| m.content.as_str())
                    .unwrap_or_default();
                Ok(format!("{}\n\n{user}", request.system))
            }
            TIMEOUT_DIRECTIVE => Err(LlmError::Timeout),
            _ => Ok(next),
        }
    }
}
