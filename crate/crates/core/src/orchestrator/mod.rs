//! Run driver: speaker scheduling, termination, stage hand-off, escalation
//! routing and adaptive fallback.

mod driver;
mod escalation;
mod schedule;

pub use driver::{run_pipeline, OrchestratorError, RunOptions, RunResult, RunStats, Services};
pub use escalation::{
    apply_adaptive_fallback, classify_and_escalate, EscalationAction, EscalationEvent, EscalationIssue,
};
pub use schedule::{
    advance_stage, check_termination, next_speaker, stage_input, ScheduleError, StageInput, StageInputError,
};
