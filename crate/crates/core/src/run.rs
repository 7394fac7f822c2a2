//! Live run state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{new_run_id, IdGen, IdMode};
use crate::message::{Attachment, Message};
use crate::provenance::digest_of;
use crate::spec::{bind_params, ParamError, Params, PipelineSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Pending,
    Running,
    AwaitingHuman,
    Completed,
    Failed,
    Aborted,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::Failed | RunStatus::Aborted)
    }

    /// pending → running ⇄ awaiting-human → {completed, failed, aborted}.
    /// A run may fail or abort while awaiting a human, never complete.
    pub fn can_transition(self, to: RunStatus) -> bool {
        use RunStatus::*;
        matches!(
            (self, to),
            (Pending, Running)
                | (Running, AwaitingHuman)
                | (AwaitingHuman, Running)
                | (Running, Completed)
                | (Running, Failed)
                | (Running, Aborted)
                | (AwaitingHuman, Failed)
                | (AwaitingHuman, Aborted)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Pending => "pending",
            RunStatus::Running => "running",
            RunStatus::AwaitingHuman => "awaiting-human",
            RunStatus::Completed => "completed",
            RunStatus::Failed => "failed",
            RunStatus::Aborted => "aborted",
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a completed stage hands forward: its final agent output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageArtifact {
    pub stage_id: String,
    pub message_id: String,
    pub sender: String,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
    /// Markdown copy inside the run directory, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("invalid status transition {from} → {to}")]
    Transition { from: RunStatus, to: RunStatus },
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub run_id: String,
    pub spec: Arc<PipelineSpec>,
    pub spec_hash: String,
    pub params: Params,
    pub seed: u64,
    pub status: RunStatus,
    /// Stage currently executing (or last executed).
    pub stage_cursor: Option<String>,
    pub transcript: Vec<Message>,
    pub stage_artifacts: BTreeMap<String, StageArtifact>,
    pub failed_stages: BTreeSet<String>,
    pub skipped_stages: BTreeSet<String>,
    pub ids: IdGen,
    pub mode: IdMode,
    pub created_at: DateTime<Utc>,
    /// Why the run failed or was aborted.
    pub cause: Option<String>,
}

/// Creates a pending run. Parameters are checked against the spec's
/// declarations and defaults filled in.
pub fn new_run(spec: Arc<PipelineSpec>, params: &Params, seed: u64, mode: IdMode) -> Result<RunState, RunError> {
    let params = bind_params(&spec, params)?;
    Ok(RunState {
        run_id: new_run_id(mode, seed),
        spec_hash: digest_of(&*spec),
        stage_cursor: spec.stages.first().map(|s| s.id.clone()),
        spec,
        params,
        seed,
        status: RunStatus::Pending,
        transcript: Vec::new(),
        stage_artifacts: BTreeMap::new(),
        failed_stages: BTreeSet::new(),
        skipped_stages: BTreeSet::new(),
        ids: IdGen::new(mode, seed),
        mode,
        created_at: Utc::now(),
        cause: None,
    })
}

impl RunState {
    pub fn transition(&mut self, to: RunStatus) -> Result<(), RunError> {
        if !self.status.can_transition(to) {
            return Err(RunError::Transition { from: self.status, to });
        }
        self.status = to;
        Ok(())
    }

    pub fn last_message_id(&self) -> Option<&str> {
        self.transcript.last().map(|m| m.id.as_str())
    }

    /// Digest over the transcript without run ids and timestamps.
    pub fn transcript_digest(&self) -> String {
        transcript_digest(&self.transcript)
    }
}

pub fn transcript_digest(transcript: &[Message]) -> String {
    let stable: Vec<_> = transcript.iter().map(Message::stable_view).collect();
    digest_of(&stable)
}
