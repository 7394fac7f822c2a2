//! Human-in-the-loop checkpoints.
//!
//! A stage may declare a [`CheckpointSpec`]. After the stage produces its
//! artifact the orchestrator opens a [`CheckpointRecord`] in the shared
//! [`CheckpointStore`] and asks a [`DecisionSource`] for a decision. Records
//! are decided exactly once; the store is the single writer.

pub mod api;
mod source;

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use source::{AutoApprove, ConsoleSource, DecisionSource, ScriptedDecisions, SourceClosed, StoreWait};

/// What happens when nobody answers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointPolicy {
    /// Wait indefinitely.
    #[default]
    Block,
    AutoApprove,
    /// Seconds to wait before approving.
    AutoApproveAfter(u64),
    /// Seconds to wait before aborting.
    AbortAfter(u64),
}

impl CheckpointPolicy {
    /// Timer and the decision it produces, if any.
    pub fn timer(self) -> Option<(Duration, Decision)> {
        match self {
            CheckpointPolicy::AutoApproveAfter(s) => Some((Duration::from_secs(s), Decision::Approve)),
            CheckpointPolicy::AbortAfter(s) => Some((Duration::from_secs(s), Decision::Abort)),
            _ => None,
        }
    }
}

fn is_default_policy(p: &CheckpointPolicy) -> bool {
    *p == CheckpointPolicy::Block
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSpec {
    pub id: String,
    pub prompt: String,
    /// Stages whose artifacts are shown; empty means the checkpointed stage.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub payload: Vec<String>,
    #[serde(default, skip_serializing_if = "is_default_policy")]
    pub policy: CheckpointPolicy,
    /// Whether a revise decision without an explicit `rerun` re-executes
    /// the stage.
    #[serde(default, skip_serializing_if = "is_false")]
    pub revise_rerun: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Decision {
    Approve,
    Revise {
        feedback: String,
        /// Defaults to the checkpoint's `revise_rerun`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rerun: Option<bool>,
        /// Replacement task text for the re-executed (or next) stage.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task: Option<String>,
    },
    Abort,
}

impl Decision {
    pub fn revise(feedback: impl Into<String>, rerun: bool) -> Self {
        Decision::Revise {
            feedback: feedback.into(),
            rerun: Some(rerun),
            task: None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Decision::Approve => "approve",
            Decision::Revise { .. } => "revise",
            Decision::Abort => "abort",
        }
    }

    /// Strict decoding of a decision document. Serde lets extra keys through
    /// on `approve` and `abort`; this does not.
    pub fn from_value(doc: serde_json::Value) -> Result<Self, String> {
        let keys: Vec<String> = match doc.as_object() {
            Some(obj) => obj.keys().cloned().collect(),
            None => return Err("decision document must be an object".into()),
        };
        let decision: Decision = serde_json::from_value(doc).map_err(|e| e.to_string())?;
        let allowed: &[&str] = match decision {
            Decision::Revise { .. } => &["decision", "feedback", "rerun", "task"],
            _ => &["decision"],
        };
        match keys.iter().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(format!("unknown field `{k}` for a `{}` decision", decision.label())),
            None => Ok(decision),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    /// `{run_id}:{checkpoint_id}`; usable as a URL path segment.
    pub id: String,
    pub checkpoint_id: String,
    pub run_id: String,
    pub stage_id: String,
    pub prompt: String,
    /// Bound stage artifacts rendered as markdown.
    pub payload: String,
    #[serde(default)]
    pub policy: CheckpointPolicy,
    #[serde(default)]
    pub revise_rerun: bool,
    pub opened_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_by: Option<String>,
}

pub fn record_id(run_id: &str, checkpoint_id: &str) -> String {
    format!("{run_id}:{checkpoint_id}")
}

impl CheckpointRecord {
    pub fn new(run_id: &str, stage_id: &str, spec: &CheckpointSpec, payload: String) -> Self {
        Self {
            id: record_id(run_id, &spec.id),
            checkpoint_id: spec.id.clone(),
            run_id: run_id.to_string(),
            stage_id: stage_id.to_string(),
            prompt: spec.prompt.clone(),
            payload,
            policy: spec.policy,
            revise_rerun: spec.revise_rerun,
            opened_at: Utc::now(),
            decision: None,
            decided_at: None,
            decided_by: None,
        }
    }

    pub fn is_pending(&self) -> bool {
        self.decision.is_none()
    }

    /// Whether a revise decision re-executes the stage.
    pub fn reruns(&self, decision: &Decision) -> bool {
        match decision {
            Decision::Revise { rerun, .. } => rerun.unwrap_or(self.revise_rerun),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("checkpoint {0} is already open")]
    Duplicate(String),
    #[error("unknown checkpoint record {0}")]
    Unknown(String),
    #[error("checkpoint record {0} is already decided")]
    AlreadyDecided(String),
}

#[derive(Default)]
struct StoreInner {
    records: Vec<CheckpointRecord>,
    closed: bool,
}

/// All checkpoint records of a process. Decisions may arrive from any
/// thread; waiters are woken through a condition variable.
#[derive(Default)]
pub struct CheckpointStore {
    inner: Mutex<StoreInner>,
    changed: Condvar,
}

impl std::fmt::Debug for CheckpointStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CheckpointStore").finish_non_exhaustive()
    }
}

impl CheckpointStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&self, record: CheckpointRecord) -> Result<CheckpointRecord, CheckpointError> {
        let mut inner = self.inner.lock().expect("store lock");
        if inner.records.iter().any(|r| r.id == record.id) {
            return Err(CheckpointError::Duplicate(record.id));
        }
        inner.records.push(record.clone());
        drop(inner);
        self.changed.notify_all();
        Ok(record)
    }

    /// Sets the decision of an undecided record.
    pub fn decide(&self, id: &str, decision: Decision, decided_by: &str) -> Result<CheckpointRecord, CheckpointError> {
        let mut inner = self.inner.lock().expect("store lock");
        let record = inner
            .records
            .iter_mut()
            .find(|r| r.id == id)
            .ok_or_else(|| CheckpointError::Unknown(id.to_string()))?;
        if record.decision.is_some() {
            return Err(CheckpointError::AlreadyDecided(id.to_string()));
        }
        record.decision = Some(decision);
        record.decided_at = Some(Utc::now().max(record.opened_at));
        record.decided_by = Some(decided_by.to_string());
        let out = record.clone();
        drop(inner);
        self.changed.notify_all();
        Ok(out)
    }

    pub fn get(&self, id: &str) -> Option<CheckpointRecord> {
        let inner = self.inner.lock().expect("store lock");
        inner.records.iter().find(|r| r.id == id).cloned()
    }

    /// Undecided records, newest first, optionally for one run.
    pub fn pending(&self, run: Option<&str>) -> Vec<CheckpointRecord> {
        let inner = self.inner.lock().expect("store lock");
        inner
            .records
            .iter()
            .rev()
            .filter(|r| r.is_pending() && run.is_none_or(|id| r.run_id == id))
            .cloned()
            .collect()
    }

    /// Every record, in opening order, optionally for one run.
    pub fn records(&self, run: Option<&str>) -> Vec<CheckpointRecord> {
        let inner = self.inner.lock().expect("store lock");
        inner
            .records
            .iter()
            .filter(|r| run.is_none_or(|id| r.run_id == id))
            .cloned()
            .collect()
    }

    /// Blocks until the record is decided, the store is closed or the
    /// timeout elapses. Returns the decided record, if any.
    pub fn wait_decided(&self, id: &str, timeout: Option<Duration>) -> Option<CheckpointRecord> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut inner = self.inner.lock().expect("store lock");
        loop {
            if let Some(r) = inner.records.iter().find(|r| r.id == id) {
                if r.decision.is_some() {
                    return Some(r.clone());
                }
            }
            if inner.closed {
                return None;
            }
            match deadline {
                None => inner = self.changed.wait(inner).expect("store lock"),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return None;
                    }
                    inner = self.changed.wait_timeout(inner, d - now).expect("store lock").0;
                }
            }
        }
    }

    /// Wakes all waiters; pending waits report no decision.
    pub fn close(&self) {
        self.inner.lock().expect("store lock").closed = true;
        self.changed.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().expect("store lock").closed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: &str) -> CheckpointSpec {
        CheckpointSpec {
            id: id.into(),
            prompt: "Review".into(),
            payload: vec![],
            policy: CheckpointPolicy::Block,
            revise_rerun: false,
        }
    }

    #[test]
    fn decision_documents_are_strict() {
        use serde_json::json;
        assert_eq!(Decision::from_value(json!({"decision": "abort"})), Ok(Decision::Abort));
        assert_eq!(
            Decision::from_value(json!({"decision": "revise", "feedback": "more", "rerun": true})),
            Ok(Decision::revise("more", true))
        );
        assert!(Decision::from_value(json!({"decision": "approve", "feedback": "x"})).is_err());
        assert!(Decision::from_value(json!({"decision": "revise", "feedback": "x", "why": 1})).is_err());
        assert!(Decision::from_value(json!("approve")).is_err());
    }

    #[test]
    fn decisions_are_immutable() {
        let store = CheckpointStore::new();
        let rec = store
            .open(CheckpointRecord::new("r1", "s", &spec("c1"), "p".into()))
            .unwrap();
        assert!(matches!(
            store.open(CheckpointRecord::new("r1", "s", &spec("c1"), "p".into())),
            Err(CheckpointError::Duplicate(_))
        ));
        store.decide(&rec.id, Decision::Approve, "ann").unwrap();
        assert_eq!(
            store.decide(&rec.id, Decision::Abort, "bob"),
            Err(CheckpointError::AlreadyDecided(rec.id.clone()))
        );
        let now = store.get(&rec.id).unwrap();
        assert_eq!(now.decision, Some(Decision::Approve));
        assert_eq!(now.decided_by.as_deref(), Some("ann"));
        assert!(now.decided_at.unwrap() >= now.opened_at);
        assert!(store.decide("r1:none", Decision::Approve, "x").is_err());
    }

    #[test]
    fn pending_is_newest_first_and_filterable() {
        let store = CheckpointStore::new();
        assert!(store.pending(None).is_empty());
        store
            .open(CheckpointRecord::new("A", "s", &spec("c"), String::new()))
            .unwrap();
        store
            .open(CheckpointRecord::new("B", "s", &spec("c"), String::new()))
            .unwrap();
        let all = store.pending(None);
        assert_eq!(all[0].run_id, "B");
        assert_eq!(store.pending(Some("A")).len(), 1);
        store.decide("A:c", Decision::Approve, "x").unwrap();
        assert!(store.pending(Some("A")).is_empty());
    }

    #[test]
    fn decision_documents_parse() {
        let d: Decision = serde_json::from_str(r#"{"decision":"revise","feedback":"x","rerun":false}"#).unwrap();
        assert_eq!(d, Decision::revise("x", false));
        let d: Decision = serde_json::from_str(r#"{"decision":"approve"}"#).unwrap();
        assert_eq!(d, Decision::Approve);
        assert!(serde_json::from_str::<Decision>(r#"{"decision":"maybe"}"#).is_err());
    }

    #[test]
    fn revise_rerun_defaults_per_checkpoint() {
        let mut s = spec("c");
        s.revise_rerun = true;
        let rec = CheckpointRecord::new("r", "st", &s, String::new());
        let d = Decision::Revise {
            feedback: "f".into(),
            rerun: None,
            task: None,
        };
        assert!(rec.reruns(&d));
        assert!(!rec.reruns(&Decision::revise("f", false)));
    }
}
