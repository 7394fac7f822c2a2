use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{JoinRule, PipelineSpec, Scheduling, TerminationCondition, DEFAULT_MODEL_BINDING};
use crate::template;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    NoStages,
    EmptyName,
    DuplicateAgent,
    DuplicateStage,
    DuplicateCheckpoint,
    EmptySystemMessage,
    UnknownTool,
    UnknownAgent,
    UnknownModelBinding,
    EmptyRoster,
    RosterAllDisabled,
    EmptySentinel,
    ZeroCount,
    InvalidJoin,
    FallbackCycle,
    UnknownFallbackStage,
    BadEntryBinding,
    UnknownParam,
    ParamDefaultMismatch,
    BadCheckpointPayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn kinds(&self) -> BTreeSet<ViolationKind> {
        self.violations.iter().map(|v| v.kind).collect()
    }

    fn push(&mut self, kind: ViolationKind, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            location: location.into(),
            message: message.into(),
        });
    }
}

/// Checks every spec invariant. Violations are returned as data; an empty
/// report means the spec is accepted.
pub fn validate_pipeline_spec(spec: &PipelineSpec, known_tools: &BTreeSet<String>) -> ValidationReport {
    let mut report = ValidationReport::default();
    if spec.name.trim().is_empty() {
        report.push(ViolationKind::EmptyName, "pipeline", "pipeline name is empty");
    }
    if spec.stages.is_empty() {
        report.push(ViolationKind::NoStages, "pipeline", "at least one stage is required");
    }

    for (name, decl) in &spec.params {
        if let Some(default) = &decl.default {
            if !default.matches(decl.ty) {
                report.push(
                    ViolationKind::ParamDefaultMismatch,
                    format!("params.{name}"),
                    format!("default is {} but the parameter is {}", default.type_of(), decl.ty),
                );
            }
        }
    }

    check_agents(spec, known_tools, &mut report);
    check_stages(spec, &mut report);
    report
}

fn binding_known(spec: &PipelineSpec, name: &str) -> bool {
    name == DEFAULT_MODEL_BINDING || spec.models.contains_key(name)
}

fn check_agents(spec: &PipelineSpec, known_tools: &BTreeSet<String>, report: &mut ValidationReport) {
    let mut seen = HashSet::new();
    for agent in &spec.agents {
        let loc = format!("agent `{}`", agent.name);
        if agent.name.trim().is_empty() {
            report.push(ViolationKind::EmptyName, "agents", "agent with empty name");
        }
        if !seen.insert(agent.name.as_str()) {
            report.push(
                ViolationKind::DuplicateAgent,
                loc.clone(),
                format!("agent name `{}` is declared more than once", agent.name),
            );
        }
        if agent.system_message.trim().is_empty() {
            report.push(
                ViolationKind::EmptySystemMessage,
                loc.clone(),
                "system message is empty",
            );
        }
        for tool in &agent.tools {
            if !known_tools.contains(tool) {
                report.push(
                    ViolationKind::UnknownTool,
                    loc.clone(),
                    format!("tool `{tool}` is not registered"),
                );
            }
        }
        if !binding_known(spec, &agent.model) {
            report.push(
                ViolationKind::UnknownModelBinding,
                loc.clone(),
                format!("model binding `{}` is not declared", agent.model),
            );
        }
        if let Some(handler) = &agent.escalation.handler_agent {
            if spec.agent(handler).is_none() {
                report.push(
                    ViolationKind::UnknownAgent,
                    loc.clone(),
                    format!("escalation handler `{handler}` is not declared"),
                );
            }
        }
    }
}

fn check_termination(cond: &TerminationCondition, loc: &str, report: &mut ValidationReport) {
    match cond {
        TerminationCondition::Sentinel(token) if token.trim().is_empty() => {
            report.push(ViolationKind::EmptySentinel, loc, "sentinel token is empty")
        }
        TerminationCondition::MaxTurns(0) | TerminationCondition::AllSpoken(0) => {
            report.push(ViolationKind::ZeroCount, loc, "termination count must be at least 1")
        }
        _ => {}
    }
}

fn check_join(
    join: Option<JoinRule>,
    scheduling: Scheduling,
    roster_len: usize,
    loc: &str,
    report: &mut ValidationReport,
) {
    let Some(join) = join else { return };
    if scheduling != Scheduling::ParallelFanout {
        report.push(
            ViolationKind::InvalidJoin,
            loc,
            "join rule declared on a non-parallel stage",
        );
    } else if let JoinRule::Quorum(n) = join {
        if n == 0 || n as usize > roster_len {
            report.push(
                ViolationKind::InvalidJoin,
                loc,
                format!("quorum {n} outside 1..={roster_len}"),
            );
        }
    }
}

fn check_stages(spec: &PipelineSpec, report: &mut ValidationReport) {
    let mut stage_ids = HashSet::new();
    let mut checkpoint_ids = HashSet::new();
    let mut earlier: BTreeSet<&str> = BTreeSet::new();

    for stage in &spec.stages {
        let loc = format!("stage `{}`", stage.id);
        if stage.id.trim().is_empty() {
            report.push(ViolationKind::EmptyName, "stages", "stage with empty id");
        }
        if !stage_ids.insert(stage.id.as_str()) {
            report.push(
                ViolationKind::DuplicateStage,
                loc.clone(),
                format!("stage id `{}` is declared more than once", stage.id),
            );
        }
        if stage.roster.is_empty() {
            report.push(ViolationKind::EmptyRoster, loc.clone(), "roster is empty");
        }
        let mut any_enabled = false;
        for name in &stage.roster {
            match spec.agent(name) {
                Some(agent) => any_enabled |= agent.enabled,
                None => report.push(
                    ViolationKind::UnknownAgent,
                    loc.clone(),
                    format!("roster agent `{name}` is not declared"),
                ),
            }
        }
        if !stage.roster.is_empty() && !any_enabled && stage.roster.iter().all(|n| spec.agent(n).is_some()) {
            report.push(
                ViolationKind::RosterAllDisabled,
                loc.clone(),
                "every roster agent is disabled",
            );
        }
        check_termination(&stage.termination, &loc, report);
        check_join(stage.join, stage.scheduling, stage.roster.len(), &loc, report);
        if stage.turn_limit == Some(0) || stage.loop_limit == Some(0) {
            report.push(
                ViolationKind::ZeroCount,
                loc.clone(),
                "turn and loop limits must be at least 1",
            );
        }
        if let Some(model) = &stage.model {
            if !binding_known(spec, model) {
                report.push(
                    ViolationKind::UnknownModelBinding,
                    loc.clone(),
                    format!("model binding `{model}` is not declared"),
                );
            }
        }

        for bound in stage.entry.stages.iter().chain(&stage.entry.optional) {
            if !earlier.contains(bound.as_str()) {
                report.push(
                    ViolationKind::BadEntryBinding,
                    loc.clone(),
                    format!("entry binding `{bound}` is not an earlier stage"),
                );
            }
        }
        let mut param_refs: Vec<(String, &str)> = stage
            .entry
            .params
            .iter()
            .map(|p| (p.clone(), "entry binding"))
            .collect();
        param_refs.extend(
            template::placeholders(&stage.task)
                .into_iter()
                .map(|p| (p, "task template")),
        );
        if let Some(when) = &stage.when {
            param_refs.push((when.clone(), "stage condition"));
        }
        for (param, what) in param_refs {
            if !spec.params.contains_key(&param) {
                report.push(
                    ViolationKind::UnknownParam,
                    loc.clone(),
                    format!("{what} uses undeclared parameter `{param}`"),
                );
            }
        }

        if let Some(cp) = &stage.checkpoint {
            if !checkpoint_ids.insert(cp.id.as_str()) {
                report.push(
                    ViolationKind::DuplicateCheckpoint,
                    loc.clone(),
                    format!("checkpoint id `{}` is declared more than once", cp.id),
                );
            }
            for bound in &cp.payload {
                if bound != &stage.id && !earlier.contains(bound.as_str()) {
                    report.push(
                        ViolationKind::BadCheckpointPayload,
                        loc.clone(),
                        format!("checkpoint payload `{bound}` is not this or an earlier stage"),
                    );
                }
            }
        }

        for (i, fb) in stage.fallbacks.iter().enumerate() {
            let floc = format!("{loc} fallback {}", i + 1);
            if let Some(t) = &fb.termination {
                check_termination(t, &floc, report);
            }
            let scheduling = fb.scheduling.unwrap_or(stage.scheduling);
            check_join(fb.join, scheduling, stage.roster.len(), &floc, report);
            if fb.loop_limit == Some(0) || fb.turn_limit == Some(0) {
                report.push(
                    ViolationKind::ZeroCount,
                    floc.clone(),
                    "turn and loop limits must be at least 1",
                );
            }
            if let Some(model) = &fb.model {
                if !binding_known(spec, model) {
                    report.push(
                        ViolationKind::UnknownModelBinding,
                        floc.clone(),
                        format!("model binding `{model}` is not declared"),
                    );
                }
            }
            if let Some(borrowed) = &fb.stage {
                if borrowed == &stage.id {
                    report.push(
                        ViolationKind::FallbackCycle,
                        floc.clone(),
                        "fallback references its own stage",
                    );
                } else if spec.stage(borrowed).is_none() {
                    report.push(
                        ViolationKind::UnknownFallbackStage,
                        floc.clone(),
                        format!("fallback borrows unknown stage `{borrowed}`"),
                    );
                }
            }
        }
        earlier.insert(stage.id.as_str());
    }

    // Borrow chains between distinct stages must not loop back.
    let edges: BTreeMap<&str, Vec<&str>> = spec
        .stages
        .iter()
        .map(|s| {
            let targets = s
                .fallbacks
                .iter()
                .filter_map(|f| f.stage.as_deref())
                .filter(|t| *t != s.id && spec.stage(t).is_some())
                .collect();
            (s.id.as_str(), targets)
        })
        .collect();
    for start in edges.keys() {
        if reaches(start, start, &edges, &mut HashSet::new()) {
            report.push(
                ViolationKind::FallbackCycle,
                format!("stage `{start}`"),
                "fallback borrow chain loops back to this stage",
            );
        }
    }
}

fn reaches<'a>(
    from: &'a str,
    target: &str,
    edges: &BTreeMap<&'a str, Vec<&'a str>>,
    seen: &mut HashSet<&'a str>,
) -> bool {
    for next in edges.get(from).into_iter().flatten() {
        if *next == target {
            return true;
        }
        if seen.insert(next) && reaches(next, target, edges, seen) {
            return true;
        }
    }
    false
}
