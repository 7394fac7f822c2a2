use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::digest::{digest_of, sha256_hex};
use super::log::{read_event_log, EventKind, ProvenanceEvent, EVENT_LOG_FILE};
use super::manifest::{read_manifest, RunManifest, SCRIPT_FILE, SPEC_FILE, TOOLS_FILE};
use crate::runtime::{BackendKind, ScriptedBackendScript};
use crate::spec::parse_pipeline_spec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyKind {
    MissingFile,
    BadManifest,
    UnparseableEvent,
    SeqGap,
    PayloadDigest,
    RunIdMismatch,
    EventCount,
    EventLogDigest,
    TranscriptDigest,
    SpecDigest,
    ScriptDigest,
    ToolsDigest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyViolation {
    pub kind: VerifyKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub violations: Vec<VerifyViolation>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: VerifyKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: VerifyKind, detail: impl Into<String>) {
        self.violations.push(VerifyViolation {
            kind,
            detail: detail.into(),
        });
    }
}

impl std::fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        for v in &self.violations {
            writeln!(f, "{:?}: {}", v.kind, v.detail)?;
        }
        Ok(())
    }
}

/// Checks a run directory: event sequence and digests, and every digest the
/// manifest records against the stored files.
pub fn verify_run_dir(dir: &Path) -> VerifyReport {
    let mut report = VerifyReport::default();
    let manifest = match read_manifest(dir) {
        Ok(m) => Some(m),
        Err(e) => {
            report.push(VerifyKind::BadManifest, e.to_string());
            None
        }
    };
    let log_path = dir.join(EVENT_LOG_FILE);
    let raw = match fs::read(&log_path) {
        Ok(b) => b,
        Err(e) => {
            report.push(VerifyKind::MissingFile, format!("{EVENT_LOG_FILE}: {e}"));
            return report;
        }
    };
    let lines = read_event_log(&log_path).unwrap_or_default();
    let mut events = Vec::new();
    for line in lines {
        match line {
            Ok(e) => events.push(e),
            Err(bad) => report.push(
                VerifyKind::UnparseableEvent,
                format!("line {}: {}", bad.line, bad.error),
            ),
        }
    }
    check_events(&events, manifest.as_ref().map(|m| m.run_id.as_str()), &mut report);

    let Some(manifest) = manifest else {
        return report;
    };
    if manifest.event_count != events.len() as u64 {
        report.push(
            VerifyKind::EventCount,
            format!(
                "manifest records {} events, log holds {}",
                manifest.event_count,
                events.len()
            ),
        );
    }
    if sha256_hex(&raw) != manifest.event_log_digest {
        report.push(
            VerifyKind::EventLogDigest,
            "event log bytes differ from the recorded digest",
        );
    }
    if transcript_digest_of(&events) != manifest.transcript_digest {
        report.push(
            VerifyKind::TranscriptDigest,
            "transcript rebuilt from the log does not match",
        );
    }
    check_spec(dir, &manifest, &mut report);
    check_script(dir, SCRIPT_FILE, &manifest, &mut report);
    match fs::read(dir.join(TOOLS_FILE)).map(|b| serde_json::from_slice::<Value>(&b)) {
        Ok(Ok(tools)) if digest_of(&tools) == manifest.tools_digest => {}
        Ok(Ok(_)) => report.push(
            VerifyKind::ToolsDigest,
            "tools.json differs from the recorded registry digest",
        ),
        Ok(Err(e)) => report.push(VerifyKind::ToolsDigest, format!("tools.json: {e}")),
        Err(e) => report.push(VerifyKind::MissingFile, format!("{TOOLS_FILE}: {e}")),
    }
    report
}

fn check_events(events: &[ProvenanceEvent], run_id: Option<&str>, report: &mut VerifyReport) {
    let mut expected = 1;
    for e in events {
        if e.seq != expected {
            report.push(VerifyKind::SeqGap, format!("expected seq {expected}, found {}", e.seq));
        }
        expected = e.seq + 1;
        if !e.digest_matches() {
            report.push(
                VerifyKind::PayloadDigest,
                format!("event {} payload digest mismatch", e.seq),
            );
        }
        if let Some(id) = run_id {
            if e.run_id != id {
                report.push(
                    VerifyKind::RunIdMismatch,
                    format!("event {} belongs to run {}", e.seq, e.run_id),
                );
            }
        }
    }
}

/// Transcript digest recomputed from the message events of a log.
pub fn transcript_digest_of(events: &[ProvenanceEvent]) -> String {
    let stable: Vec<&Value> = events
        .iter()
        .filter(|e| e.kind == EventKind::Message)
        .filter_map(|e| e.payload.get("message"))
        .collect();
    digest_of(&stable)
}

fn check_spec(dir: &Path, manifest: &RunManifest, report: &mut VerifyReport) {
    let bytes = match fs::read(dir.join(SPEC_FILE)) {
        Ok(b) => b,
        Err(e) => {
            report.push(VerifyKind::MissingFile, format!("{SPEC_FILE}: {e}"));
            return;
        }
    };
    if sha256_hex(&bytes) != manifest.spec_file_digest {
        report.push(VerifyKind::SpecDigest, "spec.toml was modified");
        return;
    }
    let parsed = std::str::from_utf8(&bytes)
        .map_err(|e| e.to_string())
        .and_then(|s| parse_pipeline_spec(s).map_err(|e| e.to_string()));
    match parsed {
        Ok(spec) if digest_of(&spec) == manifest.spec_digest => {}
        Ok(_) => report.push(VerifyKind::SpecDigest, "parsed spec differs from the recorded digest"),
        Err(e) => report.push(VerifyKind::SpecDigest, format!("spec.toml no longer parses: {e}")),
    }
}

/// Scripts built in memory are identified by the digest of their parsed
/// form rather than of a file.
fn script_value_digest(bytes: &[u8]) -> Option<String> {
    let text = std::str::from_utf8(bytes).ok()?;
    ScriptedBackendScript::parse(text).ok().map(|s| digest_of(&s))
}

fn check_script(dir: &Path, name: &str, manifest: &RunManifest, report: &mut VerifyReport) {
    if !matches!(manifest.backend.kind, BackendKind::Scripted | BackendKind::Replay) {
        return;
    }
    let Some(expected) = &manifest.backend.script_digest else {
        return;
    };
    match fs::read(dir.join(name)) {
        Ok(bytes) if &sha256_hex(&bytes) == expected || script_value_digest(&bytes).as_ref() == Some(expected) => {}
        Ok(_) => report.push(
            VerifyKind::ScriptDigest,
            format!("{name} differs from the recorded script digest"),
        ),
        Err(e) => report.push(VerifyKind::MissingFile, format!("{name}: {e}")),
    }
}
