use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::digest::digest_of;

pub const EVENT_FORMAT_VERSION: u32 = 1;
pub const EVENT_LOG_FILE: &str = "events.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    RunStatus,
    Message,
    ToolInvoke,
    ToolResult,
    CheckpointOpen,
    CheckpointDecide,
    Escalation,
    BackendCall,
    BackendReply,
}

/// One line of the append-only event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEvent {
    pub format_version: u32,
    pub run_id: String,
    pub seq: u64,
    pub time: DateTime<Utc>,
    pub kind: EventKind,
    pub actor: String,
    pub payload: Value,
    pub payload_digest: String,
}

impl ProvenanceEvent {
    pub fn digest_matches(&self) -> bool {
        digest_of(&self.payload) == self.payload_digest
    }

    /// Field of the payload as a string, if present.
    pub fn payload_str(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("out-of-order event: expected seq {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("event {seq} payload digest does not match its payload")]
    DigestMismatch { seq: u64 },
    #[error("event for run {got} appended to log of run {expected}")]
    WrongRun { expected: String, got: String },
    #[error("event log storage failure: {0}")]
    Storage(#[from] std::io::Error),
}

type Observer = Box<dyn Fn(&ProvenanceEvent) + Send + Sync>;

struct Inner {
    events: Vec<ProvenanceEvent>,
    writer: Option<File>,
    finished: bool,
}

/// Append-only, write-ahead event log for a single run.
///
/// Events are kept in memory for readers (the HTTP API, replay) and, when the
/// log is file-backed, appended and synced to `events.jsonl` before
/// [`ProvenanceLog::record_event`] returns.
pub struct ProvenanceLog {
    run_id: String,
    dir: Option<PathBuf>,
    inner: Mutex<Inner>,
    changed: Condvar,
    observers: RwLock<Vec<Observer>>,
}

impl std::fmt::Debug for ProvenanceLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProvenanceLog")
            .field("run_id", &self.run_id)
            .field("dir", &self.dir)
            .finish_non_exhaustive()
    }
}

impl ProvenanceLog {
    pub fn in_memory(run_id: impl Into<String>) -> Arc<Self> {
        Arc::new(Self {
            run_id: run_id.into(),
            dir: None,
            inner: Mutex::new(Inner {
                events: Vec::new(),
                writer: None,
                finished: false,
            }),
            changed: Condvar::new(),
            observers: RwLock::new(Vec::new()),
        })
    }

    /// File-backed log in `dir` (created if needed). Refuses to reuse a
    /// directory that already holds an event log.
    pub fn create(dir: impl AsRef<Path>, run_id: impl Into<String>) -> Result<Arc<Self>, LogError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(dir.join(EVENT_LOG_FILE))?;
        Ok(Arc::new(Self {
            run_id: run_id.into(),
            dir: Some(dir),
            inner: Mutex::new(Inner {
                events: Vec::new(),
                writer: Some(file),
                finished: false,
            }),
            changed: Condvar::new(),
            observers: RwLock::new(Vec::new()),
        }))
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Registers a callback invoked after each event is durably appended.
    pub fn subscribe(&self, observer: impl Fn(&ProvenanceEvent) + Send + Sync + 'static) {
        self.observers.write().expect("observer lock").push(Box::new(observer));
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().expect("log lock").events.last().map_or(0, |e| e.seq)
    }

    /// Appends a fully formed event. `seq` must be exactly one past the last.
    pub fn record_event(&self, event: ProvenanceEvent) -> Result<(), LogError> {
        {
            let mut inner = self.inner.lock().expect("log lock");
            self.append_locked(&mut inner, &event)?;
        }
        self.changed.notify_all();
        self.notify(&event);
        Ok(())
    }

    /// Builds the next event (seq, time, digest) and appends it.
    pub fn emit(&self, kind: EventKind, actor: &str, payload: Value) -> Result<ProvenanceEvent, LogError> {
        let event = {
            let mut inner = self.inner.lock().expect("log lock");
            let last = inner.events.last();
            let now = Utc::now();
            let time = last.map_or(now, |e| e.time.max(now));
            let event = ProvenanceEvent {
                format_version: EVENT_FORMAT_VERSION,
                run_id: self.run_id.clone(),
                seq: last.map_or(1, |e| e.seq + 1),
                time,
                kind,
                actor: actor.to_string(),
                payload_digest: digest_of(&payload),
                payload,
            };
            self.append_locked(&mut inner, &event)?;
            event
        };
        self.changed.notify_all();
        self.notify(&event);
        Ok(event)
    }

    fn append_locked(&self, inner: &mut Inner, event: &ProvenanceEvent) -> Result<(), LogError> {
        let expected = inner.events.last().map_or(1, |e| e.seq + 1);
        if event.seq != expected {
            return Err(LogError::OutOfOrder {
                expected,
                got: event.seq,
            });
        }
        if event.run_id != self.run_id {
            return Err(LogError::WrongRun {
                expected: self.run_id.clone(),
                got: event.run_id.clone(),
            });
        }
        if !event.digest_matches() {
            return Err(LogError::DigestMismatch { seq: event.seq });
        }
        if let Some(file) = inner.writer.as_mut() {
            let mut line = serde_json::to_string(event).expect("event serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
        }
        inner.events.push(event.clone());
        Ok(())
    }

    fn notify(&self, event: &ProvenanceEvent) {
        for observer in self.observers.read().expect("observer lock").iter() {
            observer(event);
        }
    }

    pub fn events(&self) -> Vec<ProvenanceEvent> {
        self.inner.lock().expect("log lock").events.clone()
    }

    pub fn events_after(&self, seq: u64) -> Vec<ProvenanceEvent> {
        let inner = self.inner.lock().expect("log lock");
        inner.events.iter().filter(|e| e.seq > seq).cloned().collect()
    }

    /// Blocks until an event with `seq > after` exists, the log is finished,
    /// or the timeout elapses.
    pub fn wait_after(&self, after: u64, timeout: Duration) -> Vec<ProvenanceEvent> {
        let inner = self.inner.lock().expect("log lock");
        let (inner, _) = self
            .changed
            .wait_timeout_while(inner, timeout, |i| {
                !i.finished && i.events.last().map_or(0, |e| e.seq) <= after
            })
            .expect("log lock");
        inner.events.iter().filter(|e| e.seq > after).cloned().collect()
    }

    /// Marks the run finished; wakes long-poll readers.
    pub fn finish(&self) {
        self.inner.lock().expect("log lock").finished = true;
        self.changed.notify_all();
    }

    pub fn is_finished(&self) -> bool {
        self.inner.lock().expect("log lock").finished
    }
}

/// A line of a stored event log that failed to parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BadLine {
    pub line: usize,
    pub error: String,
}

/// Reads an event log file, keeping unparseable lines as errors.
pub fn read_event_log(path: &Path) -> std::io::Result<Vec<Result<ProvenanceEvent, BadLine>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(serde_json::from_slice::<ProvenanceEvent>(&line).map_err(|e| BadLine {
            line: i + 1,
            error: e.to_string(),
        }));
    }
    Ok(out)
}
