use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use super::{CheckpointRecord, CheckpointStore, Decision};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decision source closed")]
pub struct SourceClosed;

/// Where checkpoint decisions come from.
///
/// `next_decision` is called with the record already open in `store` and
/// must return the record after it has been decided there.
pub trait DecisionSource: Send + Sync {
    fn next_decision(
        &self,
        store: &CheckpointStore,
        record: &CheckpointRecord,
    ) -> Result<CheckpointRecord, SourceClosed>;
}

fn decide(
    store: &CheckpointStore,
    record: &CheckpointRecord,
    decision: Decision,
    by: &str,
) -> Result<CheckpointRecord, SourceClosed> {
    match store.decide(&record.id, decision, by) {
        Ok(r) => Ok(r),
        // Someone else (the HTTP API) got there first; their decision stands.
        Err(_) => store.get(&record.id).filter(|r| !r.is_pending()).ok_or(SourceClosed),
    }
}

/// Approves everything immediately.
#[derive(Debug, Clone, Copy, Default)]
pub struct AutoApprove;

impl DecisionSource for AutoApprove {
    fn next_decision(
        &self,
        store: &CheckpointStore,
        record: &CheckpointRecord,
    ) -> Result<CheckpointRecord, SourceClosed> {
        decide(store, record, Decision::Approve, "auto-approve")
    }
}

/// Hands out decisions from a fixed list, then reports closed.
#[derive(Debug, Default)]
pub struct ScriptedDecisions {
    queue: Mutex<VecDeque<(Decision, String)>>,
}

impl ScriptedDecisions {
    pub fn new(decisions: impl IntoIterator<Item = Decision>) -> Self {
        Self::with_deciders(decisions.into_iter().map(|d| (d, "script".to_string())))
    }

    pub fn with_deciders(decisions: impl IntoIterator<Item = (Decision, String)>) -> Self {
        Self {
            queue: Mutex::new(decisions.into_iter().collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("queue lock").len()
    }
}

impl DecisionSource for ScriptedDecisions {
    fn next_decision(
        &self,
        store: &CheckpointStore,
        record: &CheckpointRecord,
    ) -> Result<CheckpointRecord, SourceClosed> {
        let next = self.queue.lock().expect("queue lock").pop_front();
        let (decision, by) = next.ok_or(SourceClosed)?;
        decide(store, record, decision, &by)
    }
}

/// Waits for a decision to arrive through the store (normally via the HTTP
/// API), honouring the record's policy timer.
#[derive(Debug, Clone, Copy, Default)]
pub struct StoreWait;

impl DecisionSource for StoreWait {
    fn next_decision(
        &self,
        store: &CheckpointStore,
        record: &CheckpointRecord,
    ) -> Result<CheckpointRecord, SourceClosed> {
        let timer = record.policy.timer();
        if let Some(decided) = store.wait_decided(&record.id, timer.as_ref().map(|t| t.0)) {
            return Ok(decided);
        }
        match timer {
            Some((_, decision)) if !store.is_closed() => decide(store, record, decision, "policy-timer"),
            _ => Err(SourceClosed),
        }
    }
}

/// Line-oriented terminal prompt: `a` approve, `r <feedback>` revise,
/// `rr <feedback>` revise and rerun, `x` abort. End of input closes it.
pub struct ConsoleSource<R, W> {
    io: Mutex<(R, W)>,
}

impl<R: BufRead + Send, W: Write + Send> ConsoleSource<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self {
            io: Mutex::new((input, output)),
        }
    }
}

impl ConsoleSource<std::io::BufReader<std::io::Stdin>, std::io::Stderr> {
    pub fn stdio() -> Arc<Self> {
        Arc::new(Self::new(std::io::BufReader::new(std::io::stdin()), std::io::stderr()))
    }
}

pub fn parse_console_answer(line: &str) -> Option<Decision> {
    let line = line.trim();
    let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let rest = rest.trim();
    match cmd {
        "a" | "approve" => Some(Decision::Approve),
        "x" | "abort" => Some(Decision::Abort),
        "r" | "revise" if !rest.is_empty() => Some(Decision::Revise {
            feedback: rest.to_string(),
            rerun: None,
            task: None,
        }),
        "rr" if !rest.is_empty() => Some(Decision::revise(rest, true)),
        "rf" if !rest.is_empty() => Some(Decision::revise(rest, false)),
        _ => None,
    }
}

impl<R: BufRead + Send, W: Write + Send> DecisionSource for ConsoleSource<R, W> {
    fn next_decision(
        &self,
        store: &CheckpointStore,
        record: &CheckpointRecord,
    ) -> Result<CheckpointRecord, SourceClosed> {
        let mut io = self.io.lock().expect("console lock");
        let (input, output) = &mut *io;
        loop {
            let _ = write!(
                output,
                "CHECKPOINT: {}\n[a]pprove / [r]evise <feedback> / [rr] revise+rerun / [rf] revise+continue / [x] abort > ",
                record.prompt
            );
            let _ = output.flush();
            let mut line = String::new();
            match input.read_line(&mut line) {
                Ok(0) | Err(_) => return Err(SourceClosed),
                Ok(_) => {}
            }
            if let Some(decision) = parse_console_answer(&line) {
                return decide(store, record, decision, "console");
            }
        }
    }
}
