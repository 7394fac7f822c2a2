use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ModelRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinishReason {
    Stop,
    ToolCalls,
    Length,
    Error,
}

/// A tool invocation requested by the model. Arguments are kept as the raw
/// text the model produced so malformed documents can be detected later.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub name: String,
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCallRequest>,
    pub finish: FinishReason,
}

impl Completion {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            tool_calls: Vec::new(),
            finish: FinishReason::Stop,
        }
    }

    pub fn with_tool_calls(text: impl Into<String>, calls: Vec<ToolCallRequest>) -> Self {
        let finish = if calls.is_empty() {
            FinishReason::Stop
        } else {
            FinishReason::ToolCalls
        };
        Self {
            text: text.into(),
            tool_calls: calls,
            finish,
        }
    }

    /// `finish = tool-calls` requires at least one call.
    pub fn is_well_formed(&self) -> bool {
        self.finish != FinishReason::ToolCalls || !self.tool_calls.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendErrorKind {
    /// Could not reach the backend at all.
    Transport,
    /// Still rate-limited after client-side retries.
    RateLimited,
    /// Scripted backend in strict mode has no entry for the request key.
    StrictMiss,
    Timeout,
    /// The backend answered with something that is not a usable completion.
    Protocol,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind:?}: {message}")]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub message: String,
}

impl BackendError {
    pub fn new(kind: BackendErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    /// Errors that end the run instead of entering the escalation path.
    pub fn is_fatal(&self) -> bool {
        matches!(self.kind, BackendErrorKind::Transport | BackendErrorKind::StrictMiss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Scripted,
    Live,
    Replay,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Scripted => "scripted",
            BackendKind::Live => "live",
            BackendKind::Replay => "replay",
        })
    }
}

/// What a manifest records about the backend that produced a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_digest: Option<String>,
}

/// A model backend. Implementations must be safe to call from several agent
/// turns at once.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    fn complete(&self, request: &ModelRequest) -> Result<Completion, BackendError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }

    fn complete(&self, request: &ModelRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}
