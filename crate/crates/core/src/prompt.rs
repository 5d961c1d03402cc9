//! Agent and system prompt templates with recalled-context injection.

use serde::{Deserialize, Serialize};

use crate::memory_store::iso8601;
use crate::recall_engine::{EngineError, RecallOutcome};

pub const USERNAME_PLACEHOLDER: &str = "self.username";
pub const TIME_PLACEHOLDER: &str = "current.time";

pub const AGENT_PROMPT_TEMPLATE: &str = "You are a \"temporal cognition\" specialized AI agent with the same memory structure as humans; you are caring and charming, understand self.username better than anyone else. Keep the conversation going by asking yourself contextual questions and sparking discussion to show your interest in self.username.";

pub const SYSTEM_PROMPT_TEMPLATE: &str = "Based on self.username's schedule and current time: current.time, subtly guide the conversation to a context that conveys to self.username that you have a sense of time. Always output a simple short response.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub agent_prompt: String,
    pub system_prompt: String,
    pub recalled_context: Option<String>,
}

impl PromptBundle {
    /// Agent prompt, system prompt and recalled context joined into one
    /// system message.
    pub fn combined_system(&self) -> String {
        let mut out = format!("{}\n\n{}", self.agent_prompt, self.system_prompt);
        if let Some(ctx) = &self.recalled_context {
            out.push_str("\n\n");
            out.push_str(ctx);
        }
        out
    }
}

/// Substitutes both placeholders in a single left-to-right pass, so
/// replacement text is never rescanned.
pub fn fill_template(template: &str, username: &str, time: &str) -> String {
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    loop {
        let next_user = rest.find(USERNAME_PLACEHOLDER);
        let next_time = rest.find(TIME_PLACEHOLDER);
        let (pos, token, value) = match (next_user, next_time) {
            (None, None) => break,
            (Some(u), Some(t)) if t < u => (t, TIME_PLACEHOLDER, time),
            (Some(u), _) => (u, USERNAME_PLACEHOLDER, username),
            (None, Some(t)) => (t, TIME_PLACEHOLDER, time),
        };
        out.push_str(&rest[..pos]);
        out.push_str(value);
        rest = &rest[pos + token.len()..];
    }
    out.push_str(rest);
    out
}

pub fn build_prompt(
    outcome: &RecallOutcome,
    username: &str,
    now: i64,
) -> Result<PromptBundle, EngineError> {
    let username = username.trim();
    if username.is_empty() {
        return Err(EngineError::Config("username must not be empty".into()));
    }
    let time = iso8601(now);
    let recalled_context = outcome.recalled.as_ref().map(|r| {
        format!(
            "Recalled memory of {username} from {}: {}",
            iso8601(r.event.created_at),
            r.event.content
        )
    });
    Ok(PromptBundle {
        agent_prompt: fill_template(AGENT_PROMPT_TEMPLATE, username, &time),
        system_prompt: fill_template(SYSTEM_PROMPT_TEMPLATE, username, &time),
        recalled_context,
    })
}
