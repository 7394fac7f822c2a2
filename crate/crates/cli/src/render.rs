//! Terminal rendering of the provenance stream: `[INFO]` progress lines,
//! `CHECKPOINT:` prompts and the execution summary block.

use std::fmt::Write as _;

use agentloom_core::orchestrator::RunResult;
use agentloom_core::provenance::{EventKind, ProvenanceEvent};
use serde_json::Value;

/// Longest agent output excerpt shown on a progress line.
const EXCERPT: usize = 100;

#[derive(Debug, Default)]
pub struct Renderer {
    stage: Option<String>,
}

fn excerpt(text: &str) -> String {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    if line.chars().count() > EXCERPT {
        format!("{}…", line.chars().take(EXCERPT).collect::<String>())
    } else {
        line.to_string()
    }
}

impl Renderer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Lines for one event; most events render to nothing.
    pub fn render(&mut self, event: &ProvenanceEvent) -> Vec<String> {
        let p = &event.payload;
        let s = |k: &str| p.get(k).and_then(Value::as_str).unwrap_or_default();
        let mut out = Vec::new();
        match event.kind {
            EventKind::Message => {
                let stage = s("stage");
                if !stage.is_empty() && self.stage.as_deref() != Some(stage) {
                    out.push(format!("[INFO] Stage `{stage}`: starting..."));
                    self.stage = Some(stage.to_string());
                }
                let m = &p["message"];
                let text = m["content"].as_str().unwrap_or_default();
                match m["kind"].as_str() {
                    Some("agent-output") => out.push(format!(
                        "[INFO] {}: {}",
                        m["sender"].as_str().unwrap_or("?"),
                        excerpt(text)
                    )),
                    Some("control") => out.push(format!("[INFO] {text}")),
                    Some("human-feedback") => out.push(format!("[INFO] Human feedback: {}", excerpt(text))),
                    _ => {}
                }
            }
            EventKind::ToolInvoke => out.push(format!("[INFO] {} calling {}...", s("agent"), s("tool"))),
            EventKind::CheckpointOpen => {
                out.push(format!("CHECKPOINT: {}", s("prompt")));
                for line in s("payload").lines().filter(|l| !l.trim().is_empty()).take(6) {
                    out.push(format!("  | {line}"));
                }
            }
            EventKind::CheckpointDecide => {
                let decision = p["decision"]["decision"].as_str().unwrap_or("?");
                out.push(format!(
                    "[INFO] Checkpoint `{}`: {decision} ({})",
                    s("record_id"),
                    s("decided_by")
                ));
            }
            EventKind::Escalation => out.push(format!(
                "[INFO] Escalation: {} {} (attempt {}) -> {}",
                s("source_agent"),
                s("issue"),
                p["attempt"],
                s("action")
            )),
            EventKind::RunStatus if matches!(s("status"), "completed" | "failed" | "aborted") => {
                let mut line = format!("[INFO] Run {}", s("status"));
                if let Some(cause) = p.get("cause").and_then(Value::as_str) {
                    let _ = write!(line, ": {cause}");
                }
                out.push(line);
            }
            EventKind::RunStatus | EventKind::ToolResult | EventKind::BackendCall | EventKind::BackendReply => {}
        }
        out
    }
}

/// The closing block; counts come from the engine, not from the log.
pub fn summary(pipeline: &str, result: &RunResult, dir: Option<&std::path::Path>) -> String {
    let st = &result.stats;
    let mut s = String::from("--- EXECUTION SUMMARY ---\n");
    let _ = writeln!(s, "Pipeline:          {pipeline}");
    let _ = writeln!(s, "Run:               {}", result.run_id);
    let _ = writeln!(s, "Status:            {}", result.status);
    if let Some(cause) = &result.cause {
        let _ = writeln!(s, "Cause:             {cause}");
    }
    let _ = writeln!(
        s,
        "Stages:            {} completed, {} failed, {} skipped",
        st.stages_completed, st.stages_failed, st.stages_skipped
    );
    let _ = writeln!(
        s,
        "Messages:          {} ({} agent outputs)",
        st.messages, st.agent_outputs
    );
    let _ = writeln!(s, "Tool calls:        {}", st.tool_calls);
    let _ = writeln!(s, "Backend calls:     {}", st.backend_calls);
    let _ = writeln!(s, "Checkpoints:       {}", st.checkpoints);
    let _ = writeln!(s, "Escalations:       {}", st.escalations);
    let _ = writeln!(s, "Wall time:         {:.2}s", st.elapsed_ms as f64 / 1000.0);
    let _ = writeln!(s, "Transcript digest: {}", result.transcript_digest);
    if let Some(d) = dir {
        let _ = writeln!(s, "Run directory:     {}", d.display());
    }
    s
}
