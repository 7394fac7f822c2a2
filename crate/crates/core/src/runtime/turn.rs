use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::backend::{Backend, BackendError, BackendErrorKind, Completion};
use super::request::{assemble_request, tool_speaker, DecodeParams, DialogueEntry, ModelRequest, RequestKey};
use super::tool_calls::{parse_tool_calls, ToolInvocation};
use crate::message::{contains_word, Attachment, Message, MessageKind};
use crate::orchestrator::{classify_and_escalate, EscalationAction, EscalationEvent, EscalationIssue};
use crate::provenance::EventKind;
use crate::spec::{AgentSpec, EscalationPolicy, ModelBinding};
use crate::toolkit::{Effect, ToolContext, ToolError, ToolRegistry};

/// Standalone word an agent puts in its output to flag it for review.
pub const QUALITY_FLAG: &str = "QUALITY_FLAG";

/// Completions on behalf of a tool (prompt-template tools).
pub trait ModelAccess: Send + Sync {
    fn complete_for(&self, tool_name: &str, system: &str, prompt: &str) -> Result<String, BackendError>;
}

/// Per-caller call counters shared by every turn of a run. The counter for a
/// caller only advances inside that caller's own turn, so concurrent turns
/// still see deterministic indices.
#[derive(Debug, Default)]
pub struct CallCounters(Mutex<BTreeMap<String, u32>>);

impl CallCounters {
    pub fn next(&self, caller: &str) -> u32 {
        let mut map = self.0.lock().expect("counter lock");
        let slot = map.entry(caller.to_string()).or_insert(0);
        let turn = *slot;
        *slot += 1;
        turn
    }
}

type ToolOutcomes = HashMap<(String, String), VecDeque<Result<Value, String>>>;

/// Recorded tool outcomes used in replay for tools whose effects cannot be
/// reproduced, keyed by `(agent, tool)` in invocation order.
#[derive(Debug, Default)]
pub struct RecordedToolResults(Mutex<ToolOutcomes>);

impl RecordedToolResults {
    pub fn push(&self, agent: &str, tool: &str, outcome: Result<Value, String>) {
        self.0
            .lock()
            .expect("recorded lock")
            .entry((agent.to_string(), tool.to_string()))
            .or_default()
            .push_back(outcome);
    }

    fn pop(&self, agent: &str, tool: &str) -> Option<Result<Value, String>> {
        self.0
            .lock()
            .expect("recorded lock")
            .get_mut(&(agent.to_string(), tool.to_string()))?
            .pop_front()
    }
}

/// Parent of a drafted message: another draft of the same turn (by index in
/// the turn's message drafts) or an already committed message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParentRef {
    Turn(usize),
    Msg(String),
}

/// A message produced by a turn, before the orchestrator gives it an id.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageDraft {
    pub sender: String,
    pub kind: MessageKind,
    pub content: String,
    pub attachments: Vec<Attachment>,
    pub parents: Vec<ParentRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TurnRecord {
    Event {
        kind: EventKind,
        actor: String,
        payload: Value,
    },
    Message(MessageDraft),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TurnResult {
    Completed,
    Escalated {
        event: EscalationEvent,
        action: EscalationAction,
    },
    /// The run cannot continue (backend unreachable, replay divergence).
    Fatal {
        cause: String,
    },
}

/// Everything a turn produced, in the order it happened.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub records: Vec<TurnRecord>,
    pub result: TurnResult,
}

impl TurnOutcome {
    pub fn messages(&self) -> impl Iterator<Item = &MessageDraft> {
        self.records.iter().filter_map(|r| match r {
            TurnRecord::Message(m) => Some(m),
            TurnRecord::Event { .. } => None,
        })
    }

    pub fn output(&self) -> Option<&MessageDraft> {
        self.messages().find(|m| m.kind == MessageKind::AgentOutput)
    }
}

/// Inputs of one agent turn.
pub struct TurnContext<'a> {
    pub agent: &'a AgentSpec,
    /// Binding name in effect (stage overrides applied).
    pub binding_name: String,
    pub binding: ModelBinding,
    pub seed: u64,
    pub transcript: &'a [Message],
    pub task: &'a str,
    pub window: usize,
    pub loop_limit: u32,
    /// Extra dialogue line, e.g. the failure a handler agent is asked about.
    pub note: Option<String>,
    /// Id of the message the turn's first message follows.
    pub anchor: Option<String>,
    pub backend: &'a dyn Backend,
    pub tools: &'a ToolRegistry,
    pub counters: &'a CallCounters,
    pub fixtures: bool,
    pub work_dir: Option<PathBuf>,
    pub recorded: Option<&'a RecordedToolResults>,
    /// Wall-clock budget for the whole turn.
    pub budget: Option<Duration>,
    /// Handler turns may not hand off again.
    pub handler_turn: bool,
}

#[derive(Default)]
struct Recorder {
    records: Mutex<Vec<TurnRecord>>,
    drafts: Mutex<usize>,
}

impl Recorder {
    fn event(&self, kind: EventKind, actor: &str, payload: Value) {
        self.records.lock().expect("recorder lock").push(TurnRecord::Event {
            kind,
            actor: actor.to_string(),
            payload,
        });
    }

    fn message(&self, draft: MessageDraft) -> usize {
        self.records
            .lock()
            .expect("recorder lock")
            .push(TurnRecord::Message(draft));
        let mut n = self.drafts.lock().expect("recorder lock");
        *n += 1;
        *n - 1
    }

    fn finish(self, result: TurnResult) -> TurnOutcome {
        TurnOutcome {
            records: self.records.into_inner().expect("recorder lock"),
            result,
        }
    }
}

struct Caller<'a> {
    ctx: &'a TurnContext<'a>,
    recorder: &'a Recorder,
}

impl Caller<'_> {
    fn call(&self, mut request: ModelRequest) -> Result<Completion, BackendError> {
        let caller = request.key.caller.clone();
        let turn = self.ctx.counters.next(&caller);
        request.key = RequestKey {
            caller: caller.clone(),
            turn,
        };
        let actor = &self.ctx.agent.name;
        self.recorder.event(
            EventKind::BackendCall,
            actor,
            json!({"caller": caller, "turn": turn, "request": request}),
        );
        let reply = self.ctx.backend.complete(&request);
        let payload = match &reply {
            Ok(c) => json!({"caller": caller, "turn": turn, "completion": c}),
            Err(e) => json!({"caller": caller, "turn": turn, "error": e}),
        };
        self.recorder.event(EventKind::BackendReply, actor, payload);
        reply
    }

    fn base_request(&self, caller: String, system: String, dialogue: Vec<DialogueEntry>) -> ModelRequest {
        ModelRequest {
            key: RequestKey { caller, turn: 0 },
            binding: self.ctx.binding_name.clone(),
            model: self.ctx.binding.model.clone(),
            system,
            dialogue,
            tool_menu: Vec::new(),
            decode: DecodeParams::from_binding(&self.ctx.binding, self.ctx.seed),
        }
    }
}

impl ModelAccess for Caller<'_> {
    fn complete_for(&self, tool_name: &str, system: &str, prompt: &str) -> Result<String, BackendError> {
        let request = self.base_request(
            format!("{}/{tool_name}", self.ctx.agent.name),
            system.to_string(),
            vec![DialogueEntry::new(super::TASK_SPEAKER, prompt)],
        );
        let completion = self.call(request)?;
        if !completion.tool_calls.is_empty() {
            return Err(BackendError::new(
                BackendErrorKind::Protocol,
                "prompt tool completion requested tool calls",
            ));
        }
        Ok(completion.text)
    }
}

enum Failure {
    Escalate(EscalationIssue, String),
    /// Escalate without the retry budget (the turn's own budget is spent).
    Exhausted(EscalationIssue, String),
    Fatal(String),
}

/// Runs one agent turn: completion, tool calls and their results, repeated
/// until the model stops or `loop_limit` backend calls were made. Failures
/// are routed through the agent's escalation policy; retries happen here.
pub fn step_agent(ctx: &TurnContext<'_>) -> TurnOutcome {
    let recorder = Recorder::default();
    let result = run_turn(ctx, &recorder);
    recorder.finish(result)
}

fn run_turn(ctx: &TurnContext<'_>, recorder: &Recorder) -> TurnResult {
    let caller = Caller { ctx, recorder };
    let agent = ctx.agent;
    let policy = effective_policy(ctx);
    let started = Instant::now();

    let mut base = assemble_request(agent, ctx.transcript, ctx.task, ctx.window, ctx.tools);
    if let Some(note) = &ctx.note {
        base.dialogue
            .push(DialogueEntry::new(crate::message::SYSTEM, note.clone()));
    }
    let base = ModelRequest {
        binding: ctx.binding_name.clone(),
        model: ctx.binding.model.clone(),
        decode: DecodeParams::from_binding(&ctx.binding, ctx.seed),
        ..base
    };

    // Dialogue lines and message drafts produced so far in this turn.
    let mut local: Vec<DialogueEntry> = Vec::new();
    let mut last_draft: Option<usize> = None;
    let mut results: Vec<usize> = Vec::new();
    let mut attachments: Vec<Attachment> = Vec::new();

    let mut calls = 0u32;
    let mut tool_calls_made = 0u32;
    let mut attempt = 0u32;

    let follow = |last: Option<usize>| match last {
        Some(i) => vec![ParentRef::Turn(i)],
        None => ctx.anchor.iter().cloned().map(ParentRef::Msg).collect(),
    };

    'turn: loop {
        let failure = 'step: {
            if let Some(budget) = ctx.budget {
                if started.elapsed() > budget {
                    break 'step Failure::Exhausted(
                        EscalationIssue::Timeout,
                        format!("turn exceeded its {}s budget", budget.as_secs()),
                    );
                }
            }
            if calls >= ctx.loop_limit {
                break 'step Failure::Exhausted(
                    EscalationIssue::MalformedCompletion,
                    format!("tool loop limit of {} completions reached", ctx.loop_limit),
                );
            }
            let mut request = base.clone();
            request.dialogue.extend(local.iter().cloned());
            calls += 1;
            let completion = match caller.call(request) {
                Ok(c) => c,
                Err(e) if e.is_fatal() => break 'step Failure::Fatal(format!("backend unreachable: {e}")),
                Err(e) => {
                    let issue = match e.kind {
                        BackendErrorKind::Timeout | BackendErrorKind::RateLimited => EscalationIssue::Timeout,
                        _ => EscalationIssue::MalformedCompletion,
                    };
                    break 'step Failure::Escalate(issue, e.message);
                }
            };
            let invocations = match parse_tool_calls(&completion) {
                Ok(v) => v,
                Err(detail) => break 'step Failure::Escalate(EscalationIssue::MalformedCompletion, detail),
            };
            if let Err(detail) = check_menu(ctx, &invocations) {
                break 'step Failure::Escalate(EscalationIssue::MalformedCompletion, detail);
            }

            if invocations.is_empty() {
                if contains_word(&completion.text, QUALITY_FLAG) {
                    break 'step Failure::Escalate(
                        EscalationIssue::QualityFlag,
                        format!("{} flagged its output for review", agent.name),
                    );
                }
                let parents = if results.is_empty() {
                    follow(last_draft)
                } else {
                    results.iter().map(|&i| ParentRef::Turn(i)).collect()
                };
                recorder.message(MessageDraft {
                    sender: agent.name.clone(),
                    kind: MessageKind::AgentOutput,
                    content: completion.text,
                    attachments: std::mem::take(&mut attachments),
                    parents,
                });
                return TurnResult::Completed;
            }

            if tool_calls_made + invocations.len() as u32 > ctx.loop_limit.saturating_sub(1) {
                break 'step Failure::Exhausted(
                    EscalationIssue::MalformedCompletion,
                    format!("tool loop limit of {} calls reached", ctx.loop_limit.saturating_sub(1)),
                );
            }
            if !completion.text.trim().is_empty() {
                local.push(DialogueEntry::new(agent.name.clone(), completion.text.clone()));
            }

            for inv in invocations {
                tool_calls_made += 1;
                let call_idx = recorder.message(MessageDraft {
                    sender: agent.name.clone(),
                    kind: MessageKind::ToolCall,
                    content: json!({"tool": inv.name, "arguments": inv.arguments}).to_string(),
                    attachments: Vec::new(),
                    parents: follow(last_draft),
                });
                let value = match invoke_with_retries(ctx, &caller, &policy, &inv) {
                    Ok(v) => v,
                    Err(result) => return result,
                };
                let content = match &value {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                let produced: Vec<Attachment> = value
                    .get("path")
                    .and_then(Value::as_str)
                    .map(|p| Attachment {
                        name: inv.name.clone(),
                        reference: p.to_string(),
                    })
                    .into_iter()
                    .collect();
                attachments.extend(produced.iter().cloned());
                let idx = recorder.message(MessageDraft {
                    sender: agent.name.clone(),
                    kind: MessageKind::ToolResult,
                    content: content.clone(),
                    attachments: produced,
                    parents: vec![ParentRef::Turn(call_idx)],
                });
                last_draft = Some(idx);
                results.push(idx);
                local.push(DialogueEntry::new(tool_speaker(&agent.name), content));
            }
            attempt = 0;
            continue 'turn;
        };

        let (issue, detail, forced) = match failure {
            Failure::Fatal(cause) => return TurnResult::Fatal { cause },
            Failure::Escalate(issue, detail) => (issue, detail, false),
            Failure::Exhausted(issue, detail) => (issue, detail, true),
        };
        attempt = if forced { policy.max_retries + 1 } else { attempt + 1 };
        match escalate(ctx, recorder, &policy, issue, attempt, detail) {
            TurnResult::Completed => continue,
            other => return other,
        }
    }
}

fn effective_policy(ctx: &TurnContext<'_>) -> EscalationPolicy {
    let mut policy = ctx.agent.escalation.clone();
    if ctx.handler_turn {
        policy.handler_agent = None;
    }
    policy
}

fn check_menu(ctx: &TurnContext<'_>, invocations: &[ToolInvocation]) -> Result<(), String> {
    for inv in invocations {
        if !ctx.agent.tools.contains(&inv.name) {
            return Err(format!("`{}` is not among {}'s tools", inv.name, ctx.agent.name));
        }
        let spec = ctx
            .tools
            .spec(&inv.name)
            .ok_or_else(|| format!("unknown tool `{}`", inv.name))?;
        spec.validate(&inv.arguments)
            .map_err(|e| format!("invalid arguments for `{}`: {e}", inv.name))?;
    }
    Ok(())
}

/// Records the escalation and returns `Completed` when the step should be
/// retried, otherwise the terminal result.
fn escalate(
    ctx: &TurnContext<'_>,
    recorder: &Recorder,
    policy: &EscalationPolicy,
    issue: EscalationIssue,
    attempt: u32,
    detail: String,
) -> TurnResult {
    let event = EscalationEvent {
        source_agent: ctx.agent.name.clone(),
        issue,
        attempt,
        detail,
    };
    let action = classify_and_escalate(&event, policy);
    recorder.event(
        EventKind::Escalation,
        &ctx.agent.name,
        json!({
            "source_agent": event.source_agent,
            "issue": event.issue,
            "attempt": event.attempt,
            "detail": event.detail,
            "action": action.label(),
        }),
    );
    tracing::debug!(agent = %ctx.agent.name, issue = issue.as_str(), attempt, "escalation");
    match action {
        EscalationAction::Retry => TurnResult::Completed,
        action => TurnResult::Escalated { event, action },
    }
}

/// Invokes one tool, re-invoking on failure while the policy says retry.
fn invoke_with_retries(
    ctx: &TurnContext<'_>,
    caller: &Caller<'_>,
    policy: &EscalationPolicy,
    inv: &ToolInvocation,
) -> Result<Value, TurnResult> {
    let agent = &ctx.agent.name;
    let spec = ctx.tools.spec(&inv.name).expect("menu checked");
    let substitute = ctx
        .recorded
        .filter(|_| spec.effect != Effect::Pure && !spec.delegates_to_model);
    let mut attempt = 0u32;
    loop {
        caller.recorder.event(
            EventKind::ToolInvoke,
            agent,
            json!({"agent": agent, "tool": inv.name, "arguments": inv.arguments, "attempt": attempt + 1}),
        );
        let outcome: Result<Value, ToolError> = match substitute {
            Some(recorded) => match recorded.pop(agent, &inv.name) {
                Some(Ok(v)) => Ok(v),
                Some(Err(message)) => Err(ToolError::failed(&inv.name, message)),
                None => {
                    return Err(TurnResult::Fatal {
                        cause: format!("no recorded result for {agent}'s call to `{}`", inv.name),
                    })
                }
            },
            None => {
                let tctx = ToolContext {
                    caller: agent.clone(),
                    seed: ctx.seed,
                    model: Some(caller as &dyn ModelAccess),
                    fixtures: ctx.fixtures,
                    work_dir: ctx.work_dir.clone(),
                };
                ctx.tools.invoke(&inv.name, &inv.arguments, &tctx)
            }
        };
        let payload = match &outcome {
            Ok(v) => json!({"agent": agent, "tool": inv.name, "ok": true, "result": v, "effect": spec.effect}),
            Err(e) => {
                json!({"agent": agent, "tool": inv.name, "ok": false, "error": error_text(e), "effect": spec.effect})
            }
        };
        caller.recorder.event(EventKind::ToolResult, agent, payload);
        match outcome {
            Ok(v) => return Ok(v),
            Err(ToolError::Backend { error, .. }) if error.is_fatal() => {
                return Err(TurnResult::Fatal {
                    cause: format!("backend unreachable: {error}"),
                })
            }
            Err(e) => {
                attempt += 1;
                let issue = match e {
                    ToolError::Timeout { .. } => EscalationIssue::Timeout,
                    _ => EscalationIssue::ToolFailure,
                };
                match escalate(ctx, caller.recorder, policy, issue, attempt, e.to_string()) {
                    TurnResult::Completed => continue,
                    other => return Err(other),
                }
            }
        }
    }
}

/// The message a failed tool leaves in the log; replay feeds it back verbatim.
fn error_text(e: &ToolError) -> String {
    match e {
        ToolError::Failed { message, .. } => message.clone(),
        other => other.to_string(),
    }
}
