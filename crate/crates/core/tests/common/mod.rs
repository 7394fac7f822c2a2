#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use agentloom_core::catalog;
use agentloom_core::checkpoint::{AutoApprove, CheckpointStore, DecisionSource};
use agentloom_core::ids::IdMode;
use agentloom_core::orchestrator::{RunOptions, Services};
use agentloom_core::runtime::{Backend, ScriptedBackend, ScriptedBackendScript};
use agentloom_core::session::{self, FinishedRun};
use agentloom_core::spec::{ParamValue, Params};
use agentloom_core::toolkit::stock_registry;

pub fn text(pairs: &[(&str, &str)]) -> Params {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), ParamValue::Text(v.to_string())))
        .collect()
}

pub fn services(backend: Arc<dyn Backend>, decisions: Arc<dyn DecisionSource>) -> Services {
    Services {
        backend,
        tools: Arc::new(stock_registry()),
        decisions,
        store: Arc::new(CheckpointStore::new()),
    }
}

pub fn catalog_script(name: &str) -> ScriptedBackendScript {
    catalog::script(name).expect("shipped script").expect("script parses")
}

/// Runs a catalog pipeline under its bundled script, recorded under `root`.
pub fn run_catalog(
    name: &str,
    params: &Params,
    decisions: Arc<dyn DecisionSource>,
    root: &Path,
    seed: u64,
) -> FinishedRun {
    let script = catalog_script(name);
    let doc = script.to_document();
    let spec = Arc::new(catalog::instantiate(name, params).expect("instantiate"));
    let services = services(Arc::new(ScriptedBackend::new(script)), decisions);
    let options = RunOptions {
        fixtures: true,
        ..Default::default()
    };
    session::prepare(
        spec,
        params,
        seed,
        IdMode::Scripted,
        services,
        options,
        Some(root),
        Some(&doc),
    )
    .expect("prepare")
    .execute()
    .expect("execute")
}

pub fn auto() -> Arc<dyn DecisionSource> {
    Arc::new(AutoApprove)
}

pub struct InlineRun {
    pub run: agentloom_core::run::RunState,
    pub result: agentloom_core::orchestrator::RunResult,
    pub events: Vec<agentloom_core::provenance::ProvenanceEvent>,
    pub store: Arc<CheckpointStore>,
}

/// Runs a spec document in memory against a script document.
pub fn run_inline(
    spec_doc: &str,
    script_doc: &str,
    params: &Params,
    decisions: Arc<dyn DecisionSource>,
    tools: agentloom_core::toolkit::ToolRegistry,
) -> InlineRun {
    use agentloom_core::orchestrator::run_pipeline;
    use agentloom_core::provenance::ProvenanceLog;
    let spec = Arc::new(agentloom_core::spec::load_pipeline_spec(spec_doc).expect("spec loads"));
    let report = agentloom_core::spec::validate_pipeline_spec(&spec, &tools.names());
    assert!(report.is_ok(), "{:?}", report.violations);
    let store = Arc::new(CheckpointStore::new());
    let services = Services {
        backend: Arc::new(ScriptedBackend::from_document(script_doc).expect("script parses")),
        tools: Arc::new(tools),
        decisions,
        store: store.clone(),
    };
    let mut run = agentloom_core::run::new_run(spec, params, 7, IdMode::Scripted).expect("run");
    let log = ProvenanceLog::in_memory(run.run_id.clone());
    let result = run_pipeline(&mut run, &services, &log, &RunOptions::default()).expect("run_pipeline");
    InlineRun {
        run,
        result,
        events: log.events(),
        store,
    }
}

pub fn outputs_of(run: &agentloom_core::run::RunState, sender: &str) -> usize {
    use agentloom_core::message::MessageKind;
    run.transcript
        .iter()
        .filter(|m| m.kind == MessageKind::AgentOutput && m.sender == sender)
        .count()
}
