//! Event log, run manifests, verification and replay.

pub mod digest;
mod log;
mod manifest;
mod replay;
mod verify;

pub use digest::{canonical_json, digest_of, sha256_hex};
pub use log::{
    read_event_log, BadLine, EventKind, LogError, ProvenanceEvent, ProvenanceLog, EVENT_FORMAT_VERSION, EVENT_LOG_FILE,
};
pub use manifest::{
    prepare_run_dir, read_manifest, write_manifest, ManifestError, RunManifest, ATTACHMENTS_DIR, MANIFEST_FILE,
    MANIFEST_FORMAT_VERSION, SCRIPT_FILE, SPEC_FILE, TOOLS_FILE,
};
pub use replay::{recorded_decisions, recorded_script, recorded_tool_results, replay, ReplayError, ReplayOutcome};
pub use verify::{transcript_digest_of, verify_run_dir, VerifyKind, VerifyReport, VerifyViolation};
