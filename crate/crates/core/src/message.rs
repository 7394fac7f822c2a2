//! Transcript messages.
//!
//! A run's transcript is an ordered list of [`Message`]s. Each message names
//! its causal parents, so the transcript forms an acyclic graph that can be
//! audited and replayed.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const HUMAN: &str = "human";
pub const SYSTEM: &str = "system";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    Task,
    AgentOutput,
    ToolCall,
    ToolResult,
    HumanFeedback,
    Control,
}

impl MessageKind {
    /// Kinds shown to agents in their dialogue window.
    pub fn is_visible(self) -> bool {
        matches!(
            self,
            MessageKind::AgentOutput | MessageKind::ToolResult | MessageKind::HumanFeedback
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Task => "task",
            MessageKind::AgentOutput => "agent-output",
            MessageKind::ToolCall => "tool-call",
            MessageKind::ToolResult => "tool-result",
            MessageKind::HumanFeedback => "human-feedback",
            MessageKind::Control => "control",
        }
    }
}

/// Named reference to an artifact carried alongside a message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub run_id: String,
    pub sender: String,
    pub kind: MessageKind,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
    pub timestamp: DateTime<Utc>,
}

impl Message {
    /// The same message with the fields that vary between identical runs
    /// (run id and wall-clock time) removed.
    pub fn stable_view(&self) -> serde_json::Value {
        serde_json::json!({
            "id": self.id,
            "sender": self.sender,
            "kind": self.kind,
            "content": self.content,
            "attachments": self.attachments,
            "parents": self.parents,
        })
    }
}

/// True when `token` occurs in `text` as a standalone word: not preceded or
/// followed by a letter, digit or underscore. Case-sensitive.
pub fn contains_word(text: &str, token: &str) -> bool {
    if token.is_empty() {
        return false;
    }
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    text.match_indices(token).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + token.len()..].chars().next();
        !before.is_some_and(is_word) && !after.is_some_and(is_word)
    })
}

/// Checks the structural transcript invariants: unique ids, parents point to
/// earlier messages of the same run, human feedback only from the human
/// sender, and non-decreasing timestamps.
pub fn check_transcript(transcript: &[Message]) -> Result<(), String> {
    let mut seen = std::collections::HashSet::new();
    let mut last_time: Option<DateTime<Utc>> = None;
    for (i, msg) in transcript.iter().enumerate() {
        if let Some(first) = transcript.first() {
            if msg.run_id != first.run_id {
                return Err(format!("message {} belongs to another run", msg.id));
            }
        }
        for parent in &msg.parents {
            if !seen.contains(parent.as_str()) {
                return Err(format!("message {} has non-earlier parent {parent}", msg.id));
            }
        }
        if i > 0 && msg.parents.is_empty() {
            return Err(format!("message {} has no parent", msg.id));
        }
        if msg.kind == MessageKind::HumanFeedback && msg.sender != HUMAN {
            return Err(format!("human feedback {} sent by {}", msg.id, msg.sender));
        }
        if let Some(t) = last_time {
            if msg.timestamp < t {
                return Err(format!("timestamp of {} goes backwards", msg.id));
            }
        }
        last_time = Some(msg.timestamp);
        if !seen.insert(msg.id.as_str()) {
            return Err(format!("duplicate message id {}", msg.id));
        }
    }
    Ok(())
}
