use serde::{Deserialize, Serialize};

use crate::spec::{EscalationPolicy, Fallback, StageSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EscalationIssue {
    ToolFailure,
    MalformedCompletion,
    Timeout,
    QualityFlag,
}

impl EscalationIssue {
    pub fn as_str(self) -> &'static str {
        match self {
            EscalationIssue::ToolFailure => "tool-failure",
            EscalationIssue::MalformedCompletion => "malformed-completion",
            EscalationIssue::Timeout => "timeout",
            EscalationIssue::QualityFlag => "quality-flag",
        }
    }
}

/// A detected failure in an agent turn. `attempt` counts consecutive
/// failures of the same kind of step, starting at 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationEvent {
    pub source_agent: String,
    pub issue: EscalationIssue,
    pub attempt: u32,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "target", rename_all = "kebab-case")]
pub enum EscalationAction {
    Retry,
    RouteToAgent(String),
    RouteToHuman,
    FailStage,
}

impl EscalationAction {
    pub fn label(&self) -> String {
        match self {
            EscalationAction::Retry => "retry".into(),
            EscalationAction::RouteToAgent(a) => format!("route-to-agent({a})"),
            EscalationAction::RouteToHuman => "route-to-human".into(),
            EscalationAction::FailStage => "fail-stage".into(),
        }
    }
}

/// Pure routing decision: retry while under budget, then the handler agent,
/// then a human, else the stage fails.
pub fn classify_and_escalate(event: &EscalationEvent, policy: &EscalationPolicy) -> EscalationAction {
    if event.attempt <= policy.max_retries {
        EscalationAction::Retry
    } else if let Some(handler) = &policy.handler_agent {
        EscalationAction::RouteToAgent(handler.clone())
    } else if policy.then_human {
        EscalationAction::RouteToHuman
    } else {
        EscalationAction::FailStage
    }
}

/// The stage as configured after its `failure_count`-th failure, or `None`
/// once the fallback list is exhausted. `by_id` resolves fallbacks that borrow
/// another stage's scheduling. The stage id and roster never change.
pub fn apply_adaptive_fallback<'a>(
    stage: &StageSpec,
    failure_count: usize,
    by_id: impl Fn(&str) -> Option<&'a StageSpec>,
) -> Option<StageSpec> {
    let fallback: &Fallback = stage.fallbacks.get(failure_count.checked_sub(1)?)?;
    let mut next = stage.clone();
    if let Some(donor) = fallback.stage.as_deref().and_then(by_id) {
        next.scheduling = donor.scheduling;
        next.termination = donor.termination.clone();
        next.join = donor.join;
        next.turn_limit = donor.turn_limit.or(next.turn_limit);
        next.loop_limit = donor.loop_limit.or(next.loop_limit);
        if donor.model.is_some() {
            next.model = donor.model.clone();
        }
    }
    if let Some(s) = fallback.scheduling {
        next.scheduling = s;
    }
    if let Some(m) = &fallback.model {
        next.model = Some(m.clone());
    }
    if let Some(t) = &fallback.termination {
        next.termination = t.clone();
    }
    if fallback.join.is_some() {
        next.join = fallback.join;
    }
    if fallback.loop_limit.is_some() {
        next.loop_limit = fallback.loop_limit;
    }
    if fallback.turn_limit.is_some() {
        next.turn_limit = fallback.turn_limit;
    }
    Some(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{Scheduling, TerminationCondition};

    fn ev(agent: &str, issue: EscalationIssue, attempt: u32) -> EscalationEvent {
        EscalationEvent {
            source_agent: agent.into(),
            issue,
            attempt,
            detail: String::new(),
        }
    }

    fn policy(retries: u32, handler: Option<&str>, human: bool) -> EscalationPolicy {
        EscalationPolicy {
            max_retries: retries,
            handler_agent: handler.map(Into::into),
            then_human: human,
        }
    }

    #[test]
    fn routing_table() {
        let debug = policy(2, Some("Debugger"), false);
        assert_eq!(
            classify_and_escalate(&ev("Coder", EscalationIssue::ToolFailure, 1), &debug),
            EscalationAction::Retry
        );
        assert_eq!(
            classify_and_escalate(&ev("Coder", EscalationIssue::MalformedCompletion, 3), &debug),
            EscalationAction::RouteToAgent("Debugger".into())
        );
        assert_eq!(
            classify_and_escalate(
                &ev("Proofreader", EscalationIssue::QualityFlag, 1),
                &policy(0, None, true)
            ),
            EscalationAction::RouteToHuman
        );
        assert_eq!(
            classify_and_escalate(&ev("A", EscalationIssue::Timeout, 1), &policy(0, None, false)),
            EscalationAction::FailStage
        );
    }

    fn stage(fallbacks: Vec<Fallback>) -> StageSpec {
        StageSpec {
            id: "s".into(),
            roster: vec!["A".into()],
            scheduling: Scheduling::RoundRobin,
            task: String::new(),
            entry: Default::default(),
            termination: TerminationCondition::Sentinel("TERMINATE".into()),
            join: None,
            when: None,
            model: None,
            turn_limit: None,
            loop_limit: None,
            checkpoint: None,
            fallbacks,
        }
    }

    #[test]
    fn fallbacks_are_selected_in_order_and_keep_the_id() {
        let alt1 = Fallback {
            scheduling: Some(Scheduling::Sequential),
            ..Default::default()
        };
        let alt2 = Fallback {
            model: Some("conservative-verifier".into()),
            ..Default::default()
        };
        let s = stage(vec![alt1, alt2]);
        let none = |_: &str| None;
        let first = apply_adaptive_fallback(&s, 1, none).unwrap();
        assert_eq!(first.scheduling, Scheduling::Sequential);
        let second = apply_adaptive_fallback(&s, 2, none).unwrap();
        assert_eq!(second.model.as_deref(), Some("conservative-verifier"));
        assert_eq!(second.id, "s");
        assert_eq!(second.roster, s.roster);
        assert!(apply_adaptive_fallback(&s, 3, none).is_none());
    }

    #[test]
    fn fallback_can_borrow_another_stage() {
        let mut donor = stage(vec![]);
        donor.id = "donor".into();
        donor.scheduling = Scheduling::ParallelFanout;
        donor.termination = TerminationCondition::AllSpoken(1);
        let s = stage(vec![Fallback {
            stage: Some("donor".into()),
            ..Default::default()
        }]);
        let got = apply_adaptive_fallback(&s, 1, |id| (id == "donor").then_some(&donor)).unwrap();
        assert_eq!(got.scheduling, Scheduling::ParallelFanout);
        assert_eq!(got.termination, TerminationCondition::AllSpoken(1));
        assert_eq!(got.id, "s");
    }
}
