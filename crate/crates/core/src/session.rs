//! One-call setup for recorded runs: run directory, event log, execution and
//! manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::ids::IdMode;
use crate::orchestrator::{run_pipeline, OrchestratorError, RunOptions, RunResult, Services};
use crate::provenance::{
    prepare_run_dir, write_manifest, LogError, ManifestError, ProvenanceLog, RunManifest, SCRIPT_FILE,
};
use crate::run::{new_run, RunError, RunState};
use crate::spec::{Params, PipelineSpec};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("run directory i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A run with its log open but not yet started. Observers may subscribe to
/// `log` before [`PreparedRun::execute`] is called.
pub struct PreparedRun {
    pub run: RunState,
    pub log: Arc<ProvenanceLog>,
    /// Run directory; `None` for in-memory runs.
    pub dir: Option<PathBuf>,
    pub services: Services,
    pub options: RunOptions,
}

#[derive(Debug)]
pub struct FinishedRun {
    pub result: RunResult,
    pub run: RunState,
    pub manifest: RunManifest,
    pub dir: Option<PathBuf>,
}

/// Creates the run. With `log_root`, a run directory is prepared under it
/// holding the spec, the backend script (if any) and the event log, and
/// filesystem tools work inside it.
#[allow(clippy::too_many_arguments)]
pub fn prepare(
    spec: Arc<PipelineSpec>,
    params: &Params,
    seed: u64,
    mode: IdMode,
    services: Services,
    mut options: RunOptions,
    log_root: Option<&Path>,
    script_document: Option<&str>,
) -> Result<PreparedRun, SessionError> {
    let run = new_run(spec, params, seed, mode)?;
    let (log, dir) = match log_root {
        Some(root) => {
            let dir = prepare_run_dir(root, &run)?;
            if let Some(doc) = script_document {
                fs::write(dir.join(SCRIPT_FILE), doc)?;
            }
            if options.work_dir.is_none() {
                options.work_dir = Some(dir.clone());
            }
            (ProvenanceLog::create(&dir, run.run_id.clone())?, Some(dir))
        }
        None => (ProvenanceLog::in_memory(run.run_id.clone()), None),
    };
    Ok(PreparedRun {
        run,
        log,
        dir,
        services,
        options,
    })
}

impl PreparedRun {
    pub fn run_id(&self) -> &str {
        &self.run.run_id
    }

    /// Drives the run to a terminal status and writes its manifest.
    pub fn execute(mut self) -> Result<FinishedRun, SessionError> {
        let result = run_pipeline(&mut self.run, &self.services, &self.log, &self.options)?;
        let manifest = write_manifest(&self.run, &self.log, &self.services, &self.options)?;
        Ok(FinishedRun {
            result,
            run: self.run,
            manifest,
            dir: self.dir,
        })
    }
}
