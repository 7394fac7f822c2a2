use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::message::{contains_word, Message, MessageKind};
use crate::run::{RunState, StageArtifact};
use crate::spec::{Params, StageSpec, TerminationCondition};
use crate::template;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("roster is empty")]
    EmptyRoster,
    #[error("every roster agent is disabled")]
    AllDisabled,
}

/// First enabled agent strictly after `last` in cyclic roster order, or the
/// first enabled agent when nobody has spoken yet.
pub fn next_speaker<'a>(
    roster: &'a [String],
    last: Option<&str>,
    disabled: &BTreeSet<String>,
) -> Result<&'a str, ScheduleError> {
    if roster.is_empty() {
        return Err(ScheduleError::EmptyRoster);
    }
    let start = last
        .and_then(|l| roster.iter().position(|a| a == l))
        .map_or(0, |i| i + 1);
    (0..roster.len())
        .map(|k| &roster[(start + k) % roster.len()])
        .find(|a| !disabled.contains(*a))
        .map(String::as_str)
        .ok_or(ScheduleError::AllDisabled)
}

/// Whether the stage that began at `stage_start` is finished. `roster` holds
/// the enabled agents that must speak for `all-spoken`.
pub fn check_termination(
    transcript: &[Message],
    cond: &TerminationCondition,
    stage_start: usize,
    roster: &[String],
) -> bool {
    let outputs = transcript[stage_start.min(transcript.len())..]
        .iter()
        .filter(|m| m.kind == MessageKind::AgentOutput);
    match cond {
        TerminationCondition::Sentinel(token) => outputs.into_iter().any(|m| contains_word(&m.content, token)),
        TerminationCondition::MaxTurns(n) => outputs.count() >= *n as usize,
        TerminationCondition::AllSpoken(rounds) => {
            if roster.is_empty() {
                return false;
            }
            let mut spoken: BTreeMap<&str, u32> = BTreeMap::new();
            for m in outputs {
                *spoken.entry(m.sender.as_str()).or_default() += 1;
            }
            roster
                .iter()
                .all(|a| spoken.get(a.as_str()).copied().unwrap_or(0) >= *rounds)
        }
    }
}

/// What a stage starts from: its rendered task plus the artifacts and
/// parameters named by its entry binding.
#[derive(Debug, Clone, PartialEq)]
pub struct StageInput {
    pub stage_id: String,
    pub task: String,
    pub artifacts: Vec<StageArtifact>,
    pub params: Params,
}

impl StageInput {
    /// The task message shown to the stage's agents.
    pub fn render(&self) -> String {
        let mut out = self.task.trim_end().to_string();
        if !self.params.is_empty() {
            out.push_str("\n\n## Parameters\n");
            for (k, v) in &self.params {
                out.push_str(&format!("- {k}: {v}\n"));
            }
        }
        for a in &self.artifacts {
            out.push_str(&format!("\n\n## Input from {}\n\n{}", a.stage_id, a.content.trim_end()));
            for att in &a.attachments {
                out.push_str(&format!("\n- attachment {}: {}", att.name, att.reference));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StageInputError {
    #[error("stage `{stage}` needs the artifact of `{missing}`, which is unavailable")]
    Unavailable { stage: String, missing: String },
}

/// Assembles the input bundle for `stage` from the run's artifacts. A
/// `task_override` replaces the stage's own task template.
pub fn stage_input(
    run: &RunState,
    stage: &StageSpec,
    task_override: Option<&str>,
) -> Result<StageInput, StageInputError> {
    let mut artifacts = Vec::new();
    for dep in &stage.entry.stages {
        match run.stage_artifacts.get(dep) {
            Some(a) => artifacts.push(a.clone()),
            None => {
                return Err(StageInputError::Unavailable {
                    stage: stage.id.clone(),
                    missing: dep.clone(),
                })
            }
        }
    }
    artifacts.extend(
        stage
            .entry
            .optional
            .iter()
            .filter_map(|d| run.stage_artifacts.get(d).cloned()),
    );
    let params: Params = stage
        .entry
        .params
        .iter()
        .filter_map(|p| run.params.get(p).map(|v| (p.clone(), v.clone())))
        .collect();
    let values: BTreeMap<String, String> = run.params.iter().map(|(k, v)| (k.clone(), v.to_string())).collect();
    let task = template::render_partial(task_override.unwrap_or(&stage.task), &values);
    Ok(StageInput {
        stage_id: stage.id.clone(),
        task,
        artifacts,
        params,
    })
}

/// Moves the cursor past the current stage and returns the next stage's
/// input, or `None` when the current stage was the last.
pub fn advance_stage(run: &mut RunState) -> Result<Option<StageInput>, StageInputError> {
    let spec = run.spec.clone();
    let next = match run.stage_cursor.as_deref().and_then(|c| spec.stage_index(c)) {
        Some(i) => i + 1,
        None => 0,
    };
    let Some(stage) = spec.stages.get(next) else {
        return Ok(None);
    };
    run.stage_cursor = Some(stage.id.clone());
    stage_input(run, stage, None).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn speaker_rotation() {
        let roster = names(&["Theorist", "ModelDesigner", "Calibrator"]);
        let none = BTreeSet::new();
        assert_eq!(next_speaker(&roster, Some("Calibrator"), &none).unwrap(), "Theorist");
        assert_eq!(next_speaker(&roster, None, &none).unwrap(), "Theorist");
        let single = names(&["A"]);
        assert_eq!(next_speaker(&single, Some("A"), &none).unwrap(), "A");
        let abc = names(&["A", "B", "C"]);
        let b = BTreeSet::from(["B".to_string()]);
        assert_eq!(next_speaker(&abc, Some("A"), &b).unwrap(), "C");
        let all: BTreeSet<String> = abc.iter().cloned().collect();
        assert_eq!(next_speaker(&abc, None, &all), Err(ScheduleError::AllDisabled));
    }

    fn out(sender: &str, content: &str) -> Message {
        Message {
            id: format!("m-{content}"),
            run_id: "r".into(),
            sender: sender.into(),
            kind: MessageKind::AgentOutput,
            content: content.into(),
            attachments: vec![],
            parents: vec![],
            timestamp: Utc::now(),
        }
    }

    #[test]
    fn termination_rules() {
        let sentinel = TerminationCondition::Sentinel("TERMINATE".into());
        assert!(check_termination(&[out("A", "…ready. TERMINATE")], &sentinel, 0, &[]));
        assert!(!check_termination(
            &[out("A", "do not terminate yet")],
            &sentinel,
            0,
            &[]
        ));
        assert!(!check_termination(&[out("A", "TERMINATED")], &sentinel, 0, &[]));
        // Only messages of the current stage count.
        assert!(!check_termination(
            &[out("A", "TERMINATE"), out("B", "x")],
            &sentinel,
            1,
            &[]
        ));

        let ten: Vec<_> = (0..10).map(|i| out("A", &i.to_string())).collect();
        assert!(check_termination(&ten, &TerminationCondition::MaxTurns(10), 0, &[]));
        assert!(!check_termination(
            &ten[1..],
            &TerminationCondition::MaxTurns(10),
            0,
            &[]
        ));

        let roster = names(&["A", "B"]);
        let t = vec![out("A", "1"), out("B", "2"), out("A", "3")];
        assert!(check_termination(&t, &TerminationCondition::AllSpoken(1), 0, &roster));
        assert!(!check_termination(&t, &TerminationCondition::AllSpoken(2), 0, &roster));
    }
}
