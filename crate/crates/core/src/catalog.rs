//! Shipped reference pipelines and their offline scripts.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use thiserror::Error;

use crate::runtime::{ScriptError, ScriptedBackendScript};
use crate::spec::{bind_params, parse_pipeline_spec, ParamError, ParamSpec, Params, PipelineSpec};
use crate::template;

const DOCUMENTS: &[(&str, &str, bool)] = &[
    ("ideation", include_str!("../catalog/ideation.toml"), true),
    ("literature", include_str!("../catalog/literature.toml"), true),
    ("model", include_str!("../catalog/model.toml"), true),
    ("data", include_str!("../catalog/data.toml"), true),
    ("implementation", include_str!("../catalog/implementation.toml"), false),
    ("estimation", include_str!("../catalog/estimation.toml"), false),
    ("reporting", include_str!("../catalog/reporting.toml"), false),
];

const SCRIPTS: &[(&str, &str)] = &[
    ("ideation", include_str!("../catalog/scripts/ideation.toml")),
    ("literature", include_str!("../catalog/scripts/literature.toml")),
    ("model", include_str!("../catalog/scripts/model.toml")),
    ("data", include_str!("../catalog/scripts/data.toml")),
];

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: String,
    pub spec: PipelineSpec,
    pub params: BTreeMap<String, ParamSpec>,
    /// Number of stages with a checkpoint.
    pub checkpoints: usize,
    /// False for rosters built only from prompt-template tools.
    pub concrete: bool,
    /// The document the entry was loaded from.
    pub document: &'static str,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("no catalog pipeline named `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Params(#[from] ParamError),
}

/// Every shipped entry, in catalog order.
pub fn entries() -> &'static [CatalogEntry] {
    static ENTRIES: OnceLock<Vec<CatalogEntry>> = OnceLock::new();
    ENTRIES.get_or_init(|| {
        DOCUMENTS
            .iter()
            .map(|(name, doc, concrete)| {
                let spec = parse_pipeline_spec(doc).unwrap_or_else(|e| panic!("catalog `{name}`: {e}"));
                CatalogEntry {
                    name: name.to_string(),
                    params: spec.params.clone(),
                    checkpoints: spec.checkpoint_count(),
                    concrete: *concrete,
                    document: doc,
                    spec,
                }
            })
            .collect()
    })
}

/// Names of the shipped pipelines.
pub fn catalog() -> Vec<&'static str> {
    entries().iter().map(|e| e.name.as_str()).collect()
}

pub fn entry(name: &str) -> Option<&'static CatalogEntry> {
    entries().iter().find(|e| e.name == name)
}

/// Bundled offline script for a concrete entry.
pub fn script(name: &str) -> Option<Result<ScriptedBackendScript, ScriptError>> {
    SCRIPTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, doc)| ScriptedBackendScript::parse(doc))
}

/// The entry's spec bound to `params`: conditional stages whose parameter
/// is absent are dropped (with every reference to them) and task templates
/// are filled in.
pub fn instantiate(name: &str, params: &Params) -> Result<PipelineSpec, CatalogError> {
    let entry = entry(name).ok_or_else(|| CatalogError::Unknown(name.to_string()))?;
    let bound = bind_params(&entry.spec, params)?;
    Ok(specialize(&entry.spec, &bound))
}

/// Drops conditional stages whose parameter is absent from `bound` and
/// renders task templates with the bound values.
pub fn specialize(spec: &PipelineSpec, bound: &Params) -> PipelineSpec {
    let mut spec = spec.clone();
    let present = |p: &str| bound.get(p).is_some_and(|v| !v.is_empty());
    let removed: Vec<String> = spec
        .stages
        .iter()
        .filter(|s| s.when.as_deref().is_some_and(|p| !present(p)))
        .map(|s| s.id.clone())
        .collect();
    spec.stages.retain(|s| !removed.contains(&s.id));

    let values: BTreeMap<String, String> = bound.iter().map(|(k, v)| (k.clone(), v.to_string())).collect();
    for stage in &mut spec.stages {
        stage.entry.optional.retain(|s| !removed.contains(s));
        stage.entry.stages.retain(|s| !removed.contains(s));
        stage
            .fallbacks
            .retain(|f| f.stage.as_ref().is_none_or(|s| !removed.contains(s)));
        if let Some(cp) = &mut stage.checkpoint {
            cp.payload.retain(|s| !removed.contains(s));
        }
        // Stages that stay are unconditional from here on.
        stage.when = None;
        stage.task = template::render_partial(&stage.task, &values);
    }
    spec
}
