use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::escalation::{apply_adaptive_fallback, EscalationAction, EscalationEvent};
use super::schedule::{check_termination, next_speaker, stage_input, StageInput};
use crate::checkpoint::{
    CheckpointPolicy, CheckpointRecord, CheckpointSpec, CheckpointStore, Decision, DecisionSource,
};
use crate::message::{Attachment, Message, MessageKind, HUMAN, SYSTEM};
use crate::provenance::{EventKind, LogError, ProvenanceLog};
use crate::run::{RunState, RunStatus, StageArtifact};
use crate::runtime::{
    step_agent, Backend, CallCounters, ParentRef, RecordedToolResults, TurnContext, TurnOutcome, TurnRecord,
    TurnResult, DEFAULT_WINDOW,
};
use crate::spec::{JoinRule, PipelineSpec, Scheduling, StageSpec};
use crate::toolkit::ToolRegistry;

/// Shared handles a run executes against. Several runs may share them.
#[derive(Clone)]
pub struct Services {
    pub backend: Arc<dyn Backend>,
    pub tools: Arc<ToolRegistry>,
    pub decisions: Arc<dyn DecisionSource>,
    pub store: Arc<CheckpointStore>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub window: usize,
    /// Serve subscription and extraction tools from bundled fixtures.
    pub fixtures: bool,
    pub work_dir: Option<PathBuf>,
    /// Wall-clock budget per agent turn.
    pub turn_budget: Option<Duration>,
    /// Recorded results substituted for non-reproducible tools (replay).
    pub recorded: Option<Arc<RecordedToolResults>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            fixtures: false,
            work_dir: None,
            turn_budget: None,
            recorded: None,
        }
    }
}

/// Engine-measured counts for the execution summary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub messages: usize,
    pub agent_outputs: usize,
    pub tool_calls: usize,
    pub backend_calls: usize,
    pub checkpoints: usize,
    pub escalations: usize,
    pub stages_completed: usize,
    pub stages_failed: usize,
    pub stages_skipped: usize,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    pub transcript_digest: String,
    pub stats: RunStats,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("run {run_id} is {status}, not pending")]
    NotPending { run_id: String, status: RunStatus },
}

enum Halt {
    Storage(LogError),
    Fatal(String),
    Aborted(String),
}

impl From<LogError> for Halt {
    fn from(e: LogError) -> Self {
        Halt::Storage(e)
    }
}

enum TurnEnd {
    Spoke,
    /// The turn failed but a handler or a human dealt with it.
    Resolved,
    StageFailed(String),
}

enum StageEnd {
    Done,
    Failed(String),
}

/// Drives `run` from pending to a terminal status. Every state change is
/// written to `log` before it is applied.
pub fn run_pipeline(
    run: &mut RunState,
    services: &Services,
    log: &ProvenanceLog,
    options: &RunOptions,
) -> Result<RunResult, OrchestratorError> {
    if run.status != RunStatus::Pending {
        return Err(OrchestratorError::NotPending {
            run_id: run.run_id.clone(),
            status: run.status,
        });
    }
    let started = Instant::now();
    let mut driver = Driver {
        run,
        svc: services,
        log,
        opts: options,
        counters: CallCounters::default(),
        stats: RunStats::default(),
        escalation_checkpoints: 0,
        overrides: HashMap::new(),
        pending: Vec::new(),
    };
    let outcome = driver.drive();
    let (status, cause) = match outcome {
        Ok(()) if driver.run.failed_stages.is_empty() => (RunStatus::Completed, None),
        Ok(()) => {
            let cause = driver.run.cause.clone().unwrap_or_else(|| "a stage failed".to_string());
            (RunStatus::Failed, Some(cause))
        }
        Err(Halt::Fatal(cause)) => (RunStatus::Failed, Some(cause)),
        Err(Halt::Aborted(cause)) => (RunStatus::Aborted, Some(cause)),
        Err(Halt::Storage(e)) => (RunStatus::Failed, Some(format!("event log storage failure: {e}"))),
    };
    if let Err(e) = driver.set_status(status, cause.as_deref()) {
        // The log is unusable; record the outcome in memory only.
        if let Halt::Storage(e) = e {
            tracing::error!("could not record final status: {e}");
        }
        driver.run.status = status;
    }
    driver.run.cause = cause.clone();
    for record in driver.svc.store.pending(Some(&driver.run.run_id)) {
        tracing::warn!(record = %record.id, "run ended with an undecided checkpoint");
    }
    log.finish();
    driver.stats.elapsed_ms = started.elapsed().as_millis() as u64;
    Ok(RunResult {
        run_id: driver.run.run_id.clone(),
        status: driver.run.status,
        cause,
        transcript_digest: driver.run.transcript_digest(),
        stats: driver.stats,
    })
}

struct Driver<'a> {
    run: &'a mut RunState,
    svc: &'a Services,
    log: &'a ProvenanceLog,
    opts: &'a RunOptions,
    counters: CallCounters,
    stats: RunStats,
    escalation_checkpoints: u32,
    /// Replacement task text per stage id, from revise decisions.
    overrides: HashMap<String, String>,
    /// Open stage checkpoints not yet waited on: (stage index, record).
    pending: Vec<(usize, CheckpointRecord)>,
}

impl Driver<'_> {
    fn drive(&mut self) -> Result<(), Halt> {
        self.set_status(RunStatus::Running, None)?;
        let spec = self.run.spec.clone();
        for idx in 0..spec.stages.len() {
            self.run_stage_at(&spec, idx)?;
        }
        self.resolve_pending(&spec, |_| true)?;
        Ok(())
    }

    fn emit(&self, kind: EventKind, actor: &str, payload: Value) -> Result<(), Halt> {
        self.log.emit(kind, actor, payload)?;
        Ok(())
    }

    fn set_status(&mut self, to: RunStatus, cause: Option<&str>) -> Result<(), Halt> {
        let from = self.run.status;
        if from == to {
            return Ok(());
        }
        if !from.can_transition(to) {
            return Err(Halt::Fatal(format!("invalid status transition {from} → {to}")));
        }
        let mut payload = json!({"status": to, "previous": from});
        if let Some(c) = cause {
            payload["cause"] = json!(c);
        }
        self.emit(EventKind::RunStatus, SYSTEM, payload)?;
        self.run.status = to;
        Ok(())
    }

    fn commit(
        &mut self,
        sender: &str,
        kind: MessageKind,
        content: String,
        attachments: Vec<Attachment>,
        parents: Vec<String>,
        stage: &str,
    ) -> Result<String, Halt> {
        let now = Utc::now();
        let timestamp = self.run.transcript.last().map_or(now, |m| m.timestamp.max(now));
        let message = Message {
            id: self.run.ids.next_message_id(),
            run_id: self.run.run_id.clone(),
            sender: sender.to_string(),
            kind,
            content,
            attachments,
            parents,
            timestamp,
        };
        self.emit(
            EventKind::Message,
            sender,
            json!({"message": message.stable_view(), "stage": stage}),
        )?;
        self.stats.messages += 1;
        if kind == MessageKind::AgentOutput {
            self.stats.agent_outputs += 1;
        }
        let id = message.id.clone();
        self.run.transcript.push(message);
        Ok(id)
    }

    fn follow_last(&self) -> Vec<String> {
        self.run.last_message_id().map(String::from).into_iter().collect()
    }

    fn control(&mut self, content: String, stage: &str) -> Result<String, Halt> {
        let parents = self.follow_last();
        self.commit(SYSTEM, MessageKind::Control, content, Vec::new(), parents, stage)
    }

    /// Commits a turn's records in the order they happened.
    fn commit_outcome(&mut self, outcome: TurnOutcome, stage: &str) -> Result<(), Halt> {
        let mut ids: Vec<String> = Vec::new();
        for record in outcome.records {
            match record {
                TurnRecord::Event { kind, actor, payload } => {
                    match kind {
                        EventKind::BackendCall => self.stats.backend_calls += 1,
                        EventKind::ToolInvoke => self.stats.tool_calls += 1,
                        EventKind::Escalation => self.stats.escalations += 1,
                        _ => {}
                    }
                    self.emit(kind, &actor, payload)?;
                }
                TurnRecord::Message(draft) => {
                    let parents = draft
                        .parents
                        .iter()
                        .map(|p| match p {
                            ParentRef::Turn(i) => ids[*i].clone(),
                            ParentRef::Msg(id) => id.clone(),
                        })
                        .collect();
                    let id = self.commit(
                        &draft.sender,
                        draft.kind,
                        draft.content,
                        draft.attachments,
                        parents,
                        stage,
                    )?;
                    ids.push(id);
                }
            }
        }
        Ok(())
    }

    fn run_stage_at(&mut self, spec: &PipelineSpec, idx: usize) -> Result<(), Halt> {
        let stage = &spec.stages[idx];
        if let Some(param) = &stage.when {
            if !self.run.params.contains_key(param) {
                self.run.skipped_stages.insert(stage.id.clone());
                self.stats.stages_skipped += 1;
                self.control(
                    format!("Stage `{}` skipped: parameter `{param}` not supplied.", stage.id),
                    &stage.id,
                )?;
                return Ok(());
            }
        }
        let deps = dependencies(spec, idx);
        self.resolve_pending(spec, |s| deps.contains(s))?;

        self.run.stage_cursor = Some(stage.id.clone());
        let input = match stage_input(self.run, stage, self.overrides.get(&stage.id).map(String::as_str)) {
            Ok(input) => input,
            Err(e) => {
                self.fail_stage(stage, e.to_string())?;
                return Ok(());
            }
        };
        if !self.execute_with_fallbacks(spec, idx, &input)? {
            return Ok(());
        }
        if let Some(cp) = &stage.checkpoint {
            let record = self.open_checkpoint(&stage.id, cp)?;
            if cp.policy == CheckpointPolicy::AutoApprove {
                let decided = self
                    .svc
                    .store
                    .decide(&record.id, Decision::Approve, "policy")
                    .map_err(|e| Halt::Fatal(e.to_string()))?;
                self.emit_decision(&decided)?;
            } else {
                self.pending.push((idx, record));
            }
        }
        Ok(())
    }

    fn fail_stage(&mut self, stage: &StageSpec, cause: String) -> Result<(), Halt> {
        tracing::warn!(stage = %stage.id, "stage failed: {cause}");
        self.control(format!("Stage `{}` failed: {cause}", stage.id), &stage.id)?;
        self.run.failed_stages.insert(stage.id.clone());
        self.stats.stages_failed += 1;
        if self.run.cause.is_none() {
            self.run.cause = Some(format!("stage `{}` failed: {cause}", stage.id));
        }
        Ok(())
    }

    /// Runs the stage, then each fallback in turn. Returns whether the stage
    /// produced an artifact.
    fn execute_with_fallbacks(&mut self, spec: &PipelineSpec, idx: usize, input: &StageInput) -> Result<bool, Halt> {
        let original = &spec.stages[idx];
        let mut config = original.clone();
        let mut failures = 0;
        loop {
            match self.execute_stage(&config, input)? {
                StageEnd::Done => {
                    self.run.failed_stages.remove(&original.id);
                    self.stats.stages_completed += 1;
                    return Ok(true);
                }
                StageEnd::Failed(cause) => {
                    failures += 1;
                    match apply_adaptive_fallback(original, failures, |id| spec.stage(id)) {
                        Some(next) => {
                            self.control(
                                format!(
                                    "Stage `{}` attempt {failures} failed: {cause}. Switching to fallback {failures}.",
                                    original.id
                                ),
                                &original.id,
                            )?;
                            config = next;
                        }
                        None => {
                            self.fail_stage(original, cause)?;
                            return Ok(false);
                        }
                    }
                }
            }
        }
    }

    fn execute_stage(&mut self, cfg: &StageSpec, input: &StageInput) -> Result<StageEnd, Halt> {
        let task = input.render();
        let parents = self.follow_last();
        self.commit(SYSTEM, MessageKind::Task, task.clone(), Vec::new(), parents, &cfg.id)?;
        let stage_start = self.run.transcript.len() - 1;

        let spec = self.run.spec.clone();
        let disabled: BTreeSet<String> = cfg
            .roster
            .iter()
            .filter(|a| !spec.agent(a).is_some_and(|s| s.enabled))
            .cloned()
            .collect();
        let enabled: Vec<String> = cfg.roster.iter().filter(|a| !disabled.contains(*a)).cloned().collect();
        if enabled.is_empty() {
            return Ok(StageEnd::Failed("no enabled agent in the roster".into()));
        }

        let failure = match cfg.scheduling {
            Scheduling::RoundRobin => self.round_robin(cfg, &task, stage_start, &enabled, &disabled)?,
            Scheduling::Sequential => self.sequential(cfg, &task, stage_start, &enabled)?,
            Scheduling::ParallelFanout => self.fanout(cfg, &task, stage_start, &enabled)?,
        };
        if let Some(cause) = failure {
            return Ok(StageEnd::Failed(cause));
        }

        let Some(output) = self.run.transcript[stage_start..]
            .iter()
            .rev()
            .find(|m| m.kind == MessageKind::AgentOutput)
            .cloned()
        else {
            return Ok(StageEnd::Failed("stage produced no agent output".into()));
        };
        let path = self.write_artifact(&cfg.id, &output.content);
        self.run.stage_artifacts.insert(
            cfg.id.clone(),
            StageArtifact {
                stage_id: cfg.id.clone(),
                message_id: output.id.clone(),
                sender: output.sender.clone(),
                content: output.content.clone(),
                attachments: output.attachments.clone(),
                path,
            },
        );
        self.control(format!("Stage `{}` complete.", cfg.id), &cfg.id)?;
        Ok(StageEnd::Done)
    }

    fn write_artifact(&self, stage: &str, content: &str) -> Option<String> {
        let dir = self.log.dir()?.join("attachments");
        let rel = format!("attachments/{stage}.md");
        let written =
            std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join(format!("{stage}.md")), content));
        match written {
            Ok(()) => Some(rel),
            Err(e) => {
                tracing::warn!("could not write artifact for {stage}: {e}");
                None
            }
        }
    }

    fn round_robin(
        &mut self,
        cfg: &StageSpec,
        task: &str,
        stage_start: usize,
        enabled: &[String],
        disabled: &BTreeSet<String>,
    ) -> Result<Option<String>, Halt> {
        let mut last: Option<String> = None;
        let mut turns = 0;
        loop {
            if check_termination(&self.run.transcript, &cfg.termination, stage_start, enabled) {
                return Ok(None);
            }
            if turns >= cfg.turn_limit() {
                return Ok(Some(format!(
                    "turn limit of {} reached without termination",
                    cfg.turn_limit()
                )));
            }
            let speaker = match next_speaker(&cfg.roster, last.as_deref(), disabled) {
                Ok(s) => s.to_string(),
                Err(e) => return Ok(Some(e.to_string())),
            };
            turns += 1;
            if let TurnEnd::StageFailed(cause) = self.take_turn(cfg, &speaker, task)? {
                return Ok(Some(cause));
            }
            last = Some(speaker);
        }
    }

    fn sequential(
        &mut self,
        cfg: &StageSpec,
        task: &str,
        stage_start: usize,
        enabled: &[String],
    ) -> Result<Option<String>, Halt> {
        for agent in enabled {
            if let TurnEnd::StageFailed(cause) = self.take_turn(cfg, agent, task)? {
                return Ok(Some(cause));
            }
            if check_termination(&self.run.transcript, &cfg.termination, stage_start, enabled) {
                break;
            }
        }
        Ok(None)
    }

    /// Rounds of concurrent turns over the enabled roster. Each round sees
    /// the same transcript snapshot; results are committed in roster order.
    fn fanout(
        &mut self,
        cfg: &StageSpec,
        task: &str,
        stage_start: usize,
        enabled: &[String],
    ) -> Result<Option<String>, Halt> {
        let join = cfg.join_rule();
        let mut turns = 0;
        loop {
            if check_termination(&self.run.transcript, &cfg.termination, stage_start, enabled) {
                return Ok(None);
            }
            if turns + enabled.len() as u32 > cfg.turn_limit() {
                return Ok(Some(format!(
                    "turn limit of {} reached without termination",
                    cfg.turn_limit()
                )));
            }
            turns += enabled.len() as u32;
            let outcomes: Vec<TurnOutcome> = {
                let this = &*self;
                std::thread::scope(|scope| {
                    let handles: Vec<_> = enabled
                        .iter()
                        .map(|agent| scope.spawn(move || this.step(cfg, agent, task, None, false)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("agent turn panicked"))
                        .collect()
                })
            };
            let mut succeeded = 0u32;
            let mut failures = Vec::new();
            for (agent, outcome) in enabled.iter().zip(outcomes) {
                match self.settle(cfg, agent, task, outcome)? {
                    TurnEnd::Spoke | TurnEnd::Resolved => succeeded += 1,
                    TurnEnd::StageFailed(cause) => failures.push(cause),
                }
            }
            let met = match join {
                JoinRule::All => failures.is_empty(),
                JoinRule::First => succeeded >= 1,
                JoinRule::Quorum(q) => succeeded >= q,
            };
            if !met {
                return Ok(Some(format!(
                    "join rule not met ({succeeded} of {} branches succeeded): {}",
                    enabled.len(),
                    failures.join("; ")
                )));
            }
        }
    }

    fn step(
        &self,
        cfg: &StageSpec,
        agent_name: &str,
        task: &str,
        note: Option<String>,
        handler_turn: bool,
    ) -> TurnOutcome {
        let spec = &self.run.spec;
        let Some(agent) = spec.agent(agent_name) else {
            return TurnOutcome {
                records: Vec::new(),
                result: TurnResult::Fatal {
                    cause: format!("unknown agent `{agent_name}`"),
                },
            };
        };
        let binding_name = cfg.model.clone().unwrap_or_else(|| agent.model.clone());
        let ctx = TurnContext {
            agent,
            binding: spec.binding(&binding_name),
            binding_name,
            seed: self.run.seed,
            transcript: &self.run.transcript,
            task,
            window: self.opts.window,
            loop_limit: cfg.loop_limit(),
            note,
            anchor: self.run.last_message_id().map(String::from),
            backend: self.svc.backend.as_ref(),
            tools: &self.svc.tools,
            counters: &self.counters,
            fixtures: self.opts.fixtures,
            work_dir: self
                .opts
                .work_dir
                .clone()
                .or_else(|| self.log.dir().map(|d| d.join("attachments"))),
            recorded: self.opts.recorded.as_deref(),
            budget: self.opts.turn_budget,
            handler_turn,
        };
        step_agent(&ctx)
    }

    fn take_turn(&mut self, cfg: &StageSpec, agent: &str, task: &str) -> Result<TurnEnd, Halt> {
        let outcome = self.step(cfg, agent, task, None, false);
        self.settle(cfg, agent, task, outcome)
    }

    /// Commits a turn and carries out its escalation action, if any.
    fn settle(&mut self, cfg: &StageSpec, agent: &str, task: &str, outcome: TurnOutcome) -> Result<TurnEnd, Halt> {
        let result = outcome.result.clone();
        self.commit_outcome(outcome, &cfg.id)?;
        match result {
            TurnResult::Completed => Ok(TurnEnd::Spoke),
            TurnResult::Fatal { cause } => Err(Halt::Fatal(cause)),
            TurnResult::Escalated { event, action } => match action {
                EscalationAction::Retry => Ok(TurnEnd::Spoke),
                EscalationAction::FailStage => Ok(TurnEnd::StageFailed(describe(&event))),
                EscalationAction::RouteToHuman => self.human_escalation(cfg, task, &event),
                EscalationAction::RouteToAgent(handler) => {
                    if self.run.spec.agent(&handler).is_none() {
                        return Ok(TurnEnd::StageFailed(format!(
                            "{}; handler `{handler}` unknown",
                            describe(&event)
                        )));
                    }
                    let note = format!(
                        "{agent} escalated a {} after {} attempt(s): {}. Resolve the problem so the work can continue.",
                        event.issue.as_str(),
                        event.attempt,
                        event.detail
                    );
                    let handled = self.step(cfg, &handler, task, Some(note), true);
                    let result = handled.result.clone();
                    self.commit_outcome(handled, &cfg.id)?;
                    match result {
                        TurnResult::Completed => Ok(TurnEnd::Resolved),
                        TurnResult::Fatal { cause } => Err(Halt::Fatal(cause)),
                        TurnResult::Escalated { event, action } => match action {
                            EscalationAction::RouteToHuman => self.human_escalation(cfg, task, &event),
                            _ => Ok(TurnEnd::StageFailed(describe(&event))),
                        },
                    }
                }
            },
        }
    }

    /// Opens an escalation checkpoint and blocks on it. Once a human has
    /// approved or revised, the escalating agent gets one more turn; a
    /// further escalation in that turn fails the stage.
    fn human_escalation(&mut self, cfg: &StageSpec, task: &str, event: &EscalationEvent) -> Result<TurnEnd, Halt> {
        self.escalation_checkpoints += 1;
        let spec = CheckpointSpec {
            id: format!("escalation-{}-{}", event.source_agent, self.escalation_checkpoints),
            prompt: format!("{} needs help: {}", event.source_agent, describe(event)),
            payload: Vec::new(),
            policy: CheckpointPolicy::Block,
            revise_rerun: false,
        };
        let record = self.open_checkpoint(&cfg.id, &spec)?;
        let decided = self.await_decision(&record)?;
        match decided.decision.as_ref().expect("decided") {
            Decision::Approve => {}
            Decision::Revise { feedback, .. } => {
                self.feedback(feedback.clone(), &cfg.id)?;
            }
            Decision::Abort => return Err(Halt::Aborted(format!("aborted at checkpoint {}", record.checkpoint_id))),
        }
        let note = format!(
            "A human reviewed your {} ({}). Continue the task.",
            event.issue.as_str(),
            event.detail
        );
        let retry = self.step(cfg, &event.source_agent, task, Some(note), true);
        let result = retry.result.clone();
        self.commit_outcome(retry, &cfg.id)?;
        match result {
            TurnResult::Completed => Ok(TurnEnd::Resolved),
            TurnResult::Fatal { cause } => Err(Halt::Fatal(cause)),
            TurnResult::Escalated { event, .. } => Ok(TurnEnd::StageFailed(describe(&event))),
        }
    }

    fn open_checkpoint(&mut self, stage: &str, cp: &CheckpointSpec) -> Result<CheckpointRecord, Halt> {
        let payload = self.render_payload(stage, cp);
        let record = CheckpointRecord::new(&self.run.run_id, stage, cp, payload);
        self.emit(
            EventKind::CheckpointOpen,
            SYSTEM,
            json!({
                "record_id": record.id,
                "checkpoint_id": record.checkpoint_id,
                "stage": stage,
                "prompt": record.prompt,
                "payload": record.payload,
            }),
        )?;
        let record = self.svc.store.open(record).map_err(|e| Halt::Fatal(e.to_string()))?;
        self.stats.checkpoints += 1;
        Ok(record)
    }

    fn render_payload(&self, stage: &str, cp: &CheckpointSpec) -> String {
        let stages: Vec<&str> = if cp.payload.is_empty() {
            vec![stage]
        } else {
            cp.payload.iter().map(String::as_str).collect()
        };
        let mut out = String::new();
        for s in stages {
            if let Some(a) = self.run.stage_artifacts.get(s) {
                out.push_str(&format!("## {s}\n\n{}\n", a.content.trim_end()));
                for att in &a.attachments {
                    out.push_str(&format!("\n- {}: {}", att.name, att.reference));
                }
                out.push('\n');
            }
        }
        out
    }

    fn emit_decision(&mut self, record: &CheckpointRecord) -> Result<(), Halt> {
        self.emit(
            EventKind::CheckpointDecide,
            record.decided_by.as_deref().unwrap_or(HUMAN),
            json!({
                "record_id": record.id,
                "decision": record.decision,
                "decided_by": record.decided_by,
            }),
        )
    }

    /// Blocks on the decision source for `record`.
    fn await_decision(&mut self, record: &CheckpointRecord) -> Result<CheckpointRecord, Halt> {
        self.set_status(RunStatus::AwaitingHuman, None)?;
        let decided = match self.svc.decisions.next_decision(&self.svc.store, record) {
            Ok(r) => r,
            Err(_) => {
                return Err(Halt::Aborted(format!(
                    "decision source closed while awaiting {}",
                    record.checkpoint_id
                )))
            }
        };
        self.emit_decision(&decided)?;
        if !matches!(decided.decision, Some(Decision::Abort)) {
            self.set_status(RunStatus::Running, None)?;
        }
        Ok(decided)
    }

    fn feedback(&mut self, text: String, stage: &str) -> Result<String, Halt> {
        let parents = self.follow_last();
        self.commit(HUMAN, MessageKind::HumanFeedback, text, Vec::new(), parents, stage)
    }

    /// Waits on every open stage checkpoint whose stage matches `filter`,
    /// oldest first, and applies the decisions.
    fn resolve_pending(&mut self, spec: &PipelineSpec, filter: impl Fn(&str) -> bool) -> Result<(), Halt> {
        while let Some(pos) = self.pending.iter().position(|(idx, _)| filter(&spec.stages[*idx].id)) {
            let (idx, record) = self.pending.remove(pos);
            let decided = self.await_decision(&record)?;
            let stage = &spec.stages[idx];
            match decided.decision.clone().expect("decided") {
                Decision::Approve => {}
                Decision::Abort => {
                    return Err(Halt::Aborted(format!("aborted at checkpoint {}", record.checkpoint_id)));
                }
                ref decision @ Decision::Revise {
                    ref feedback, ref task, ..
                } => {
                    self.feedback(feedback.clone(), &stage.id)?;
                    if decided.reruns(decision) {
                        if let Some(t) = task {
                            self.overrides.insert(stage.id.clone(), t.clone());
                        }
                        self.rerun_stage(spec, idx)?;
                    } else if let (Some(t), Some(next)) = (task, spec.stages.get(idx + 1)) {
                        self.overrides.insert(next.id.clone(), t.clone());
                    }
                }
            }
        }
        Ok(())
    }

    /// Re-executes a checkpointed stage after a revise decision. The
    /// checkpoint is not opened again.
    fn rerun_stage(&mut self, spec: &PipelineSpec, idx: usize) -> Result<(), Halt> {
        let stage = &spec.stages[idx];
        self.stats.stages_completed = self.stats.stages_completed.saturating_sub(1);
        self.run.stage_cursor = Some(stage.id.clone());
        self.control(format!("Re-running stage `{}` with feedback.", stage.id), &stage.id)?;
        match stage_input(self.run, stage, self.overrides.get(&stage.id).map(String::as_str)) {
            Ok(input) => {
                self.execute_with_fallbacks(spec, idx, &input)?;
            }
            Err(e) => self.fail_stage(stage, e.to_string())?,
        }
        Ok(())
    }
}

fn describe(event: &EscalationEvent) -> String {
    format!(
        "{} {} (attempt {}): {}",
        event.source_agent,
        event.issue.as_str(),
        event.attempt,
        event.detail
    )
}

/// Ids of every stage `idx` reads from, directly or transitively.
fn dependencies(spec: &PipelineSpec, idx: usize) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut todo = vec![idx];
    while let Some(i) = todo.pop() {
        let entry = &spec.stages[i].entry;
        for dep in entry.stages.iter().chain(&entry.optional) {
            if out.insert(dep.clone()) {
                if let Some(j) = spec.stage_index(dep) {
                    todo.push(j);
                }
            }
        }
    }
    out
}
