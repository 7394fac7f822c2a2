//! Declarative pipeline specifications.
//!
//! A [`PipelineSpec`] is loaded from a single TOML document (see
//! `docs/pipeline-format.md`). It declares parameters, model bindings, agents
//! and an ordered list of stages. Everything here is immutable once loaded;
//! runs reference a spec through an `Arc`.

mod load;
mod params;
mod validate;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use load::{load_pipeline_spec, parse_pipeline_spec, to_document, SpecError};
pub use params::{bind_params, ParamError, ParamSpec, ParamType, ParamValue, Params};
pub use validate::{validate_pipeline_spec, ValidationReport, Violation, ViolationKind};

use crate::checkpoint::CheckpointSpec;

/// Name of the implicit model binding every agent uses unless told otherwise.
pub const DEFAULT_MODEL_BINDING: &str = "primary";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub name: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, ParamSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub models: BTreeMap<String, ModelBinding>,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub stages: Vec<StageSpec>,
}

impl PipelineSpec {
    pub fn agent(&self, name: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.name == name)
    }

    pub fn stage(&self, id: &str) -> Option<&StageSpec> {
        self.stages.iter().find(|s| s.id == id)
    }

    pub fn stage_index(&self, id: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.id == id)
    }

    /// Agent names in declaration order.
    pub fn agent_names(&self) -> Vec<&str> {
        self.agents.iter().map(|a| a.name.as_str()).collect()
    }

    /// Number of stages that declare a checkpoint.
    pub fn checkpoint_count(&self) -> usize {
        self.stages.iter().filter(|s| s.checkpoint.is_some()).count()
    }

    /// Resolved model binding; unknown names fall back to defaults.
    pub fn binding(&self, name: &str) -> ModelBinding {
        self.models.get(name).cloned().unwrap_or_default()
    }
}

/// Decode settings and provider model name behind a binding name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBinding {
    /// Provider model identifier. Falls back to `AGENTLOOM_MODEL` for live runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    /// Forward the run seed to backends that accept one.
    #[serde(default = "default_true")]
    pub seeded: bool,
}

impl Default for ModelBinding {
    fn default() -> Self {
        Self {
            model: None,
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            seeded: true,
        }
    }
}

fn default_max_output_tokens() -> u32 {
    1024
}

fn default_true() -> bool {
    true
}

fn is_true(v: &bool) -> bool {
    *v
}

fn default_binding() -> String {
    DEFAULT_MODEL_BINDING.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub system_message: String,
    #[serde(default)]
    pub tools: Vec<String>,
    #[serde(default = "default_binding")]
    pub model: String,
    #[serde(default)]
    pub escalation: EscalationPolicy,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub enabled: bool,
}

/// How an agent's failures are routed once detected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscalationPolicy {
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handler_agent: Option<String>,
    #[serde(default)]
    pub then_human: bool,
}

fn default_retries() -> u32 {
    2
}

impl Default for EscalationPolicy {
    fn default() -> Self {
        Self {
            max_retries: default_retries(),
            handler_agent: None,
            then_human: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheduling {
    RoundRobin,
    Sequential,
    ParallelFanout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationCondition {
    Sentinel(String),
    MaxTurns(u32),
    AllSpoken(u32),
}

/// How a parallel fan-out round decides success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JoinRule {
    All,
    First,
    Quorum(u32),
}

/// Which prior stage artifacts and parameters flow into a stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryBinding {
    /// Earlier stages whose artifacts must be present.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<String>,
    /// Earlier stages whose artifacts are passed along if the stage ran.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub optional: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<String>,
}

impl EntryBinding {
    pub fn is_empty(&self) -> bool {
        self.stages.is_empty() && self.optional.is_empty() && self.params.is_empty()
    }
}

/// An alternative configuration for a stage. Only scheduling and binding
/// parameters change; the stage id and roster never do.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fallback {
    /// Borrow scheduling, termination and join from another stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduling: Option<Scheduling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<TerminationCondition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join: Option<JoinRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_limit: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_limit: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub id: String,
    pub roster: Vec<String>,
    pub scheduling: Scheduling,
    /// Task template; `{param}` placeholders are filled from run parameters.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub task: String,
    #[serde(default, skip_serializing_if = "EntryBinding::is_empty")]
    pub entry: EntryBinding,
    pub termination: TerminationCondition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join: Option<JoinRule>,
    /// Run the stage only when this parameter is present and non-empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<String>,
    /// Model binding override applied to every roster agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Hard cap on agent turns; reaching it without termination fails the stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_limit: Option<u32>,
    /// Per-turn bound on backend calls in the tool loop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_limit: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<CheckpointSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallbacks: Vec<Fallback>,
}

pub const DEFAULT_TURN_LIMIT: u32 = 40;
pub const DEFAULT_LOOP_LIMIT: u32 = 8;

impl StageSpec {
    pub fn join_rule(&self) -> JoinRule {
        self.join.unwrap_or(JoinRule::All)
    }

    pub fn turn_limit(&self) -> u32 {
        self.turn_limit.unwrap_or(DEFAULT_TURN_LIMIT)
    }

    pub fn loop_limit(&self) -> u32 {
        self.loop_limit.unwrap_or(DEFAULT_LOOP_LIMIT)
    }
}

/// Per-turn wall-clock budget for live backends.
pub const LIVE_TURN_TIMEOUT: Duration = Duration::from_secs(120);
