use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::Value;
use thiserror::Error;

use super::log::{read_event_log, EventKind, LogError, ProvenanceEvent, ProvenanceLog, EVENT_LOG_FILE};
use super::manifest::{
    prepare_run_dir, read_manifest, write_manifest, ManifestError, RunManifest, SCRIPT_FILE, SPEC_FILE,
};
use super::verify::{verify_run_dir, VerifyReport};
use crate::checkpoint::{CheckpointStore, Decision, ScriptedDecisions};
use crate::ids::IdGen;
use crate::orchestrator::{run_pipeline, OrchestratorError, RunOptions, RunResult, Services};
use crate::run::{new_run, RunError};
use crate::runtime::{BackendError, Completion, RecordedToolResults, ScriptedBackend, ScriptedBackendScript};
use crate::spec::{parse_pipeline_spec, SpecError};
use crate::toolkit::{Effect, ToolRegistry};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("run directory failed verification:\n{0}")]
    Tampered(VerifyReport),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("stored spec: {0}")]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("run directory i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest field `{0}`")]
    BadManifest(&'static str),
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub result: RunResult,
    /// Transcript digest the original manifest recorded.
    pub expected_digest: String,
    /// Directory of the replayed run, when one was written.
    pub dir: Option<PathBuf>,
    pub manifest: RunManifest,
}

impl ReplayOutcome {
    pub fn matches(&self) -> bool {
        self.result.transcript_digest == self.expected_digest
    }
}

/// Strict script answering every recorded backend call with its recorded
/// reply.
pub fn recorded_script(events: &[ProvenanceEvent]) -> ScriptedBackendScript {
    let mut script = ScriptedBackendScript {
        strict: true,
        ..Default::default()
    };
    for e in events.iter().filter(|e| e.kind == EventKind::BackendReply) {
        let (Some(caller), Some(turn)) = (e.payload_str("caller"), e.payload.get("turn").and_then(Value::as_u64))
        else {
            continue;
        };
        let turn = turn as u32;
        if let Some(c) = e.payload.get("completion") {
            if let Ok(completion) = serde_json::from_value::<Completion>(c.clone()) {
                script.push(caller, turn, completion);
            }
        } else if let Some(err) = e.payload.get("error") {
            if let Ok(error) = serde_json::from_value::<BackendError>(err.clone()) {
                script.push_error(caller, turn, &error);
            }
        }
    }
    script
}

/// Recorded checkpoint decisions in order. Decisions the engine took on its
/// own (auto-approve policies) are re-taken by the engine and left out.
pub fn recorded_decisions(events: &[ProvenanceEvent]) -> ScriptedDecisions {
    ScriptedDecisions::with_deciders(
        events
            .iter()
            .filter(|e| e.kind == EventKind::CheckpointDecide)
            .filter(|e| e.payload_str("decided_by") != Some("policy"))
            .filter_map(|e| {
                let decision: Decision = serde_json::from_value(e.payload.get("decision")?.clone()).ok()?;
                let by = e.payload_str("decided_by").unwrap_or("replay").to_string();
                Some((decision, by))
            }),
    )
}

/// Outcomes of tools whose effects cannot be reproduced offline: network and
/// filesystem tools that do not go through the model.
pub fn recorded_tool_results(events: &[ProvenanceEvent], tools: &ToolRegistry) -> RecordedToolResults {
    let recorded = RecordedToolResults::default();
    for e in events.iter().filter(|e| e.kind == EventKind::ToolResult) {
        let (Some(agent), Some(tool)) = (e.payload_str("agent"), e.payload_str("tool")) else {
            continue;
        };
        let reproducible = tools
            .spec(tool)
            .is_some_and(|s| s.effect == Effect::Pure || s.delegates_to_model);
        if reproducible {
            continue;
        }
        let outcome = if e.payload.get("ok").and_then(Value::as_bool) == Some(true) {
            Ok(e.payload.get("result").cloned().unwrap_or(Value::Null))
        } else {
            Err(e.payload_str("error").unwrap_or("tool failed").to_string())
        };
        recorded.push(agent, tool, outcome);
    }
    recorded
}

/// Re-executes a recorded run offline: backend replies, checkpoint decisions
/// and non-reproducible tool results come from the event log. The directory
/// must verify first. With `out`, the replay is itself recorded there.
pub fn replay(
    dir: &Path,
    tools: Arc<ToolRegistry>,
    store: Arc<CheckpointStore>,
    out: Option<&Path>,
) -> Result<ReplayOutcome, ReplayError> {
    let report = verify_run_dir(dir);
    if !report.is_ok() {
        return Err(ReplayError::Tampered(report));
    }
    let manifest = read_manifest(dir)?;
    let spec = Arc::new(parse_pipeline_spec(&fs::read_to_string(dir.join(SPEC_FILE))?)?);
    let events: Vec<ProvenanceEvent> = read_event_log(&dir.join(EVENT_LOG_FILE))?
        .into_iter()
        .filter_map(Result::ok)
        .collect();

    let script = recorded_script(&events);
    let script_doc = script.to_document();
    let backend = ScriptedBackend::new(script).as_replay();
    let services = Services {
        backend: Arc::new(backend),
        tools: tools.clone(),
        decisions: Arc::new(recorded_decisions(&events)),
        store,
    };
    let options = RunOptions {
        window: manifest.window,
        fixtures: manifest.fixtures,
        recorded: Some(Arc::new(recorded_tool_results(&events, &tools))),
        ..Default::default()
    };

    let mut run = new_run(spec, &manifest.params, manifest.seed, manifest.id_mode)?;
    let prefix = u64::from_str_radix(&manifest.id_prefix, 16).map_err(|_| ReplayError::BadManifest("id_prefix"))?;
    run.ids = IdGen::with_prefix(prefix);

    let (log, out_dir) = match out {
        Some(root) => {
            let d = prepare_run_dir(root, &run)?;
            fs::write(d.join(SCRIPT_FILE), &script_doc)?;
            (ProvenanceLog::create(&d, run.run_id.clone())?, Some(d))
        }
        None => (ProvenanceLog::in_memory(run.run_id.clone()), None),
    };
    let result = run_pipeline(&mut run, &services, &log, &options)?;
    if out_dir.is_some() {
        write_manifest(&run, &log, &services, &options)?;
    }
    Ok(ReplayOutcome {
        result,
        expected_digest: manifest.transcript_digest.clone(),
        dir: out_dir,
        manifest,
    })
}
