use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::digest::sha256_hex;
use super::log::{ProvenanceLog, EVENT_LOG_FILE};
use crate::ids::IdMode;
use crate::orchestrator::{RunOptions, Services};
use crate::run::{RunState, RunStatus};
use crate::runtime::BackendDescriptor;
use crate::spec::{to_document, Params};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPEC_FILE: &str = "spec.toml";
pub const SCRIPT_FILE: &str = "script.toml";
pub const TOOLS_FILE: &str = "tools.json";
pub const ATTACHMENTS_DIR: &str = "attachments";

/// Everything needed to check and reproduce a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub run_id: String,
    pub pipeline: String,
    /// Digest of the parsed spec.
    pub spec_digest: String,
    /// SHA-256 of the stored `spec.toml` bytes.
    pub spec_file_digest: String,
    pub params: Params,
    pub seed: u64,
    pub id_mode: IdMode,
    /// Hex prefix of message ids, so replays issue the same ids.
    pub id_prefix: String,
    pub window: usize,
    pub fixtures: bool,
    pub backend: BackendDescriptor,
    pub tools_digest: String,
    pub event_count: u64,
    /// SHA-256 of the raw event log bytes.
    pub event_log_digest: String,
    pub transcript_digest: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("run {0} has not finished")]
    NotTerminal(String),
    #[error("run directory i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Creates `root/<run_id>` (with a numeric suffix if taken) and stores the
/// instantiated spec in it.
pub fn prepare_run_dir(root: &Path, run: &RunState) -> Result<PathBuf, ManifestError> {
    fs::create_dir_all(root)?;
    let mut dir = root.join(&run.run_id);
    let mut n = 1;
    while dir.exists() {
        dir = root.join(format!("{}-{n}", run.run_id));
        n += 1;
    }
    fs::create_dir(&dir)?;
    fs::write(dir.join(SPEC_FILE), to_document(&run.spec))?;
    Ok(dir)
}

/// Serialized event log exactly as a file-backed log stores it.
fn log_bytes(log: &ProvenanceLog) -> Result<Vec<u8>, ManifestError> {
    if let Some(dir) = log.dir() {
        return Ok(fs::read(dir.join(EVENT_LOG_FILE))?);
    }
    let mut out = Vec::new();
    for e in log.events() {
        out.extend(serde_json::to_vec(&e)?);
        out.push(b'\n');
    }
    Ok(out)
}

/// Builds the manifest of a terminal run and, for file-backed logs, writes
/// it (and the tool registry description) beside the event log.
pub fn write_manifest(
    run: &RunState,
    log: &ProvenanceLog,
    services: &Services,
    options: &RunOptions,
) -> Result<RunManifest, ManifestError> {
    if !run.status.is_terminal() {
        return Err(ManifestError::NotTerminal(run.run_id.clone()));
    }
    let spec_doc = to_document(&run.spec);
    let spec_file_digest = match log.dir() {
        Some(dir) if dir.join(SPEC_FILE).exists() => sha256_hex(fs::read(dir.join(SPEC_FILE))?),
        Some(dir) => {
            fs::write(dir.join(SPEC_FILE), &spec_doc)?;
            sha256_hex(&spec_doc)
        }
        None => sha256_hex(&spec_doc),
    };
    let manifest = RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        run_id: run.run_id.clone(),
        pipeline: run.spec.name.clone(),
        spec_digest: run.spec_hash.clone(),
        spec_file_digest,
        params: run.params.clone(),
        seed: run.seed,
        id_mode: run.mode,
        id_prefix: format!("{:016x}", run.ids.prefix()),
        window: options.window,
        fixtures: options.fixtures,
        backend: services.backend.descriptor(),
        tools_digest: services.tools.digest(),
        event_count: log.events().len() as u64,
        event_log_digest: sha256_hex(log_bytes(log)?),
        transcript_digest: run.transcript_digest(),
        status: run.status,
        cause: run.cause.clone(),
        created_at: run.created_at,
    };
    if let Some(dir) = log.dir() {
        fs::write(
            dir.join(TOOLS_FILE),
            serde_json::to_string_pretty(&services.tools.specs())?,
        )?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    }
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, ManifestError> {
    Ok(serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?)
}
