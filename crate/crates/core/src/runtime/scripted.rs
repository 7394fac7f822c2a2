//! Offline backend answering from an `(agent, turn) -> completion` table.
//!
//! Script documents are TOML:
//!
//! ```toml
//! format_version = 1
//! strict = true
//!
//! [[reply]]
//! agent = "Ideator"
//! turn = 0
//! text = "Five candidate questions ... TERMINATE"
//!
//! [[reply]]
//! agent = "Coder"
//! turn = 0
//! text = ""
//! tool_calls = [{ name = "run_tests_tool", arguments = { suite = "all" } }]
//! ```
//!
//! `arguments` may be an inline table or a raw string (kept verbatim, which
//! is how malformed argument documents are scripted). A reply may carry
//! `error = "<kind>"` instead of text to script a backend failure.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::backend::{
    Backend, BackendDescriptor, BackendError, BackendErrorKind, BackendKind, Completion, FinishReason, ToolCallRequest,
};
use super::{ModelRequest, RequestKey};
use crate::provenance::digest::{digest_of, sha256_hex};
use crate::template;

pub const SCRIPT_FORMAT_VERSION: u32 = 1;

fn default_reply() -> String {
    "{agent} has nothing further to add. TERMINATE".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedToolCall {
    pub name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedReply {
    pub agent: String,
    pub turn: u32,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ScriptedToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish: Option<FinishReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<BackendErrorKind>,
    /// Error message for scripted failures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ScriptedReply {
    fn outcome(&self) -> Result<Completion, BackendError> {
        if let Some(kind) = self.error {
            let message = self
                .detail
                .clone()
                .unwrap_or_else(|| format!("scripted {kind:?} error"));
            return Err(BackendError::new(kind, message));
        }
        let calls = self
            .tool_calls
            .iter()
            .map(|c| ToolCallRequest {
                name: c.name.clone(),
                arguments: match &c.arguments {
                    Value::String(raw) => raw.clone(),
                    other => other.to_string(),
                },
            })
            .collect();
        let mut completion = Completion::with_tool_calls(self.text.clone(), calls);
        if let Some(finish) = self.finish {
            completion.finish = finish;
        }
        Ok(completion)
    }
}

/// The `(agent, turn) -> completion` table plus its strictness flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedBackendScript {
    #[serde(default = "format_version")]
    pub format_version: u32,
    #[serde(default)]
    pub strict: bool,
    /// Reply for non-strict misses; `{agent}` and `{turn}` are substituted.
    #[serde(default = "default_reply")]
    pub default_reply: String,
    #[serde(default, rename = "reply")]
    pub replies: Vec<ScriptedReply>,
}

fn format_version() -> u32 {
    SCRIPT_FORMAT_VERSION
}

impl Default for ScriptedBackendScript {
    fn default() -> Self {
        Self {
            format_version: SCRIPT_FORMAT_VERSION,
            strict: false,
            default_reply: default_reply(),
            replies: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid script: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported script format_version {0}")]
    Version(u32),
    #[error("duplicate reply for ({0}, {1})")]
    Duplicate(String, u32),
    #[error("reply for ({0}, {1}) declares finish=tool-calls without tool calls")]
    Malformed(String, u32),
}

impl ScriptedBackendScript {
    pub fn parse(document: &str) -> Result<Self, ScriptError> {
        let script: Self = toml::from_str(document)?;
        if script.format_version != SCRIPT_FORMAT_VERSION {
            return Err(ScriptError::Version(script.format_version));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &script.replies {
            if !seen.insert((r.agent.as_str(), r.turn)) {
                return Err(ScriptError::Duplicate(r.agent.clone(), r.turn));
            }
            if r.error.is_none() && r.finish == Some(FinishReason::ToolCalls) && r.tool_calls.is_empty() {
                return Err(ScriptError::Malformed(r.agent.clone(), r.turn));
            }
        }
        Ok(script)
    }

    pub fn to_document(&self) -> String {
        toml::to_string(self).expect("scripts serialize")
    }

    pub fn push(&mut self, agent: impl Into<String>, turn: u32, completion: Completion) {
        self.replies.push(ScriptedReply {
            agent: agent.into(),
            turn,
            text: completion.text,
            tool_calls: completion
                .tool_calls
                .into_iter()
                .map(|c| ScriptedToolCall {
                    name: c.name,
                    arguments: Value::String(c.arguments),
                })
                .collect(),
            finish: Some(completion.finish),
            error: None,
            detail: None,
        });
    }

    pub fn push_error(&mut self, agent: impl Into<String>, turn: u32, error: &BackendError) {
        self.replies.push(ScriptedReply {
            agent: agent.into(),
            turn,
            text: String::new(),
            tool_calls: Vec::new(),
            finish: None,
            error: Some(error.kind),
            detail: Some(error.message.clone()),
        });
    }
}

/// Backend that looks replies up by `(caller, turn)`.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    strict: bool,
    default_reply: String,
    table: BTreeMap<RequestKey, ScriptedReply>,
    digest: String,
    kind: BackendKind,
}

impl ScriptedBackend {
    /// `digest` identifies the script in manifests; use [`Self::from_file`] to
    /// digest the file bytes.
    pub fn new(script: ScriptedBackendScript) -> Self {
        let digest = digest_of(&script);
        Self::with_digest(script, digest)
    }

    pub fn with_digest(script: ScriptedBackendScript, digest: String) -> Self {
        let table = script
            .replies
            .into_iter()
            .map(|r| {
                (
                    RequestKey {
                        caller: r.agent.clone(),
                        turn: r.turn,
                    },
                    r,
                )
            })
            .collect();
        Self {
            strict: script.strict,
            default_reply: script.default_reply,
            table,
            digest,
            kind: BackendKind::Scripted,
        }
    }

    pub fn from_document(document: &str) -> Result<Self, ScriptError> {
        let script = ScriptedBackendScript::parse(document)?;
        Ok(Self::with_digest(script, sha256_hex(document)))
    }

    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        Self::from_document(&std::fs::read_to_string(path)?)
    }

    /// Marks this backend as reconstructed from a recorded run.
    pub fn as_replay(mut self) -> Self {
        self.kind = BackendKind::Replay;
        self
    }

    pub fn script_digest(&self) -> &str {
        &self.digest
    }
}

impl Backend for ScriptedBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: self.kind,
            model: None,
            script_digest: Some(self.digest.clone()),
        }
    }

    fn complete(&self, request: &ModelRequest) -> Result<Completion, BackendError> {
        match self.table.get(&request.key) {
            Some(reply) => reply.outcome(),
            None if self.strict => Err(BackendError::new(
                BackendErrorKind::StrictMiss,
                format!("no scripted reply for ({}, {})", request.key.caller, request.key.turn),
            )),
            None => {
                let mut vars = BTreeMap::new();
                vars.insert("agent".to_string(), request.key.caller.clone());
                vars.insert("turn".to_string(), request.key.turn.to_string());
                Ok(Completion::stop(template::render_partial(&self.default_reply, &vars)))
            }
        }
    }
}
