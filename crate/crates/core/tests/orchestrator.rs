mod common;

use std::sync::Arc;

use agentloom_core::checkpoint::{Decision, ScriptedDecisions};
use agentloom_core::message::MessageKind;
use agentloom_core::provenance::EventKind;
use agentloom_core::run::RunStatus;
use agentloom_core::spec::Params;
use agentloom_core::toolkit::{stock_registry, SemanticType, ToolError, ToolSpec};
use serde_json::{Map, Value};

use common::*;

const SOLO: &str = r#"
name = "solo"
version = "1"

[[agents]]
name = "Solo"
system_message = "Finish the task."

[[stages]]
id = "only"
roster = ["Solo"]
scheduling = "round-robin"
task = "Do it."
termination = { sentinel = "TERMINATE" }
"#;

#[test]
fn single_agent_pipeline_completes() {
    let script = r#"
[[reply]]
agent = "Solo"
turn = 0
text = "done TERMINATE"
"#;
    let r = run_inline(SOLO, script, &Params::new(), auto(), stock_registry());
    assert_eq!(r.result.status, RunStatus::Completed);
    let kinds: Vec<MessageKind> = r
        .run
        .transcript
        .iter()
        .map(|m| m.kind)
        .filter(|k| *k != MessageKind::Control)
        .collect();
    assert_eq!(kinds, [MessageKind::Task, MessageKind::AgentOutput]);
    assert_eq!(r.run.transcript[1].content, "done TERMINATE");
}

#[test]
fn every_message_after_the_first_has_a_parent() {
    let tmp = tempfile::tempdir().unwrap();
    let params = text(&[("topic", "fiscal multipliers in emerging economies")]);
    let done = run_catalog("literature", &params, auto(), tmp.path(), 3);
    let ids: Vec<&str> = done.run.transcript.iter().map(|m| m.id.as_str()).collect();
    for (i, m) in done.run.transcript.iter().enumerate().skip(1) {
        assert!(!m.parents.is_empty(), "{} has no parent", m.id);
        // Parents precede children, so the relation is acyclic.
        for p in &m.parents {
            let at = ids.iter().position(|id| id == p).expect("parent exists");
            assert!(at < i);
        }
    }
}

const TRIO: &str = r#"
name = "trio"
version = "1"

[[agents]]
name = "Theorist"
system_message = "t"

[[agents]]
name = "ModelDesigner"
system_message = "m"

[[agents]]
name = "Calibrator"
system_message = "c"

[[stages]]
id = "talk"
roster = ["Theorist", "ModelDesigner", "Calibrator"]
scheduling = "round-robin"
task = "Discuss."
termination = { all-spoken = 4 }
"#;

#[test]
fn all_spoken_gives_each_agent_exactly_k_turns() {
    let script = "default_reply = \"{agent} turn {turn}\"\n";
    let r = run_inline(TRIO, script, &Params::new(), auto(), stock_registry());
    assert_eq!(r.result.status, RunStatus::Completed);
    for agent in ["Theorist", "ModelDesigner", "Calibrator"] {
        assert_eq!(outputs_of(&r.run, agent), 4, "{agent}");
    }
}

#[test]
fn disabled_agents_are_skipped() {
    let doc = TRIO.replace("system_message = \"m\"", "system_message = \"m\"\nenabled = false");
    let r = run_inline(
        &doc,
        "default_reply = \"x\"\n",
        &Params::new(),
        auto(),
        stock_registry(),
    );
    assert_eq!(r.result.status, RunStatus::Completed);
    assert_eq!(outputs_of(&r.run, "ModelDesigner"), 0);
    assert_eq!(outputs_of(&r.run, "Theorist"), 4);
}

#[test]
fn turn_limit_without_termination_fails_the_run() {
    let doc = TRIO.replace(
        "termination = { all-spoken = 4 }",
        "termination = { sentinel = \"DONE\" }\nturn_limit = 5",
    );
    let r = run_inline(
        &doc,
        "default_reply = \"x\"\n",
        &Params::new(),
        auto(),
        stock_registry(),
    );
    assert_eq!(r.result.status, RunStatus::Failed);
    assert!(
        r.run
            .transcript
            .iter()
            .filter(|m| m.kind == MessageKind::AgentOutput)
            .count()
            == 5
    );
}

fn failing_registry() -> agentloom_core::toolkit::ToolRegistry {
    let reg = stock_registry();
    reg.register(
        ToolSpec::network("always_fail", "Fails on every call.", vec![], SemanticType::Text),
        |_: &Map<String, Value>, _: &agentloom_core::toolkit::ToolContext<'_>| -> Result<Value, ToolError> {
            Err(ToolError::failed("always_fail", "injected failure"))
        },
    )
    .unwrap();
    reg
}

const CODING: &str = r#"
name = "coding"
version = "1"

[[agents]]
name = "Coder"
system_message = "Write code."
tools = ["always_fail"]
escalation = { max_retries = 2, handler_agent = "Debugger" }

[[agents]]
name = "Debugger"
system_message = "Fix failures."

[[stages]]
id = "code"
roster = ["Coder"]
scheduling = "sequential"
task = "Build it."
termination = { max-turns = 1 }
"#;

const CALL_FAILING_TOOL: &str = r#"
[[reply]]
agent = "Coder"
turn = 0
tool_calls = [{ name = "always_fail", arguments = {} }]

[[reply]]
agent = "Proofreader"
turn = 0
tool_calls = [{ name = "always_fail", arguments = {} }]
"#;

#[test]
fn failing_tool_is_retried_then_routed_to_handler() {
    let r = run_inline(CODING, CALL_FAILING_TOOL, &Params::new(), auto(), failing_registry());
    let invokes: Vec<_> = r.events.iter().filter(|e| e.kind == EventKind::ToolInvoke).collect();
    assert_eq!(invokes.len(), 3);
    let attempts: Vec<u64> = invokes.iter().map(|e| e.payload["attempt"].as_u64().unwrap()).collect();
    assert_eq!(attempts, [1, 2, 3]);
    let routed: Vec<_> = r
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Escalation && e.payload_str("action") == Some("route-to-agent(Debugger)"))
        .collect();
    assert_eq!(routed.len(), 1);
    assert!(routed[0].seq > invokes[2].seq);
    assert_eq!(outputs_of(&r.run, "Debugger"), 1);
    assert_eq!(r.result.status, RunStatus::Completed);
}

#[test]
fn then_human_policy_opens_a_checkpoint() {
    let doc = CODING
        .replace("\"Coder\"", "\"Proofreader\"")
        .replace("handler_agent = \"Debugger\"", "then_human = true");
    let r = run_inline(&doc, CALL_FAILING_TOOL, &Params::new(), auto(), failing_registry());
    let records = r.store.records(None);
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].checkpoint_id, "escalation-Proofreader-1");
    assert!(r
        .events
        .iter()
        .any(|e| e.kind == EventKind::Escalation && e.payload_str("action") == Some("route-to-human")));
    assert_eq!(r.result.status, RunStatus::Completed, "{:?}", r.result.cause);
}

#[test]
fn no_handler_fails_the_stage() {
    let doc = CODING.replace("max_retries = 2, handler_agent = \"Debugger\"", "max_retries = 0");
    let r = run_inline(&doc, CALL_FAILING_TOOL, &Params::new(), auto(), failing_registry());
    assert_eq!(r.result.status, RunStatus::Failed);
    assert_eq!(r.run.failed_stages.len(), 1);
}

fn model_params() -> Params {
    text(&[("model_type", "DSGE"), ("focus", "fiscal policy impacts")])
}

#[test]
fn model_run_with_three_approvals() {
    let tmp = tempfile::tempdir().unwrap();
    let decisions = Arc::new(ScriptedDecisions::new([
        Decision::Approve,
        Decision::Approve,
        Decision::Approve,
    ]));
    let done = run_catalog("model", &model_params(), decisions, tmp.path(), 42);
    assert_eq!(done.result.status, RunStatus::Completed);
    assert_eq!(done.result.stats.checkpoints, 3);
}

#[test]
fn abort_at_first_checkpoint_stops_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let decisions = Arc::new(ScriptedDecisions::new([Decision::Abort]));
    let done = run_catalog("model", &model_params(), decisions, tmp.path(), 42);
    assert_eq!(done.result.status, RunStatus::Aborted);
    assert_eq!(outputs_of(&done.run, "ModelDesigner"), 0);
    assert_eq!(outputs_of(&done.run, "Calibrator"), 0);
}

#[test]
fn closed_decision_source_aborts() {
    let tmp = tempfile::tempdir().unwrap();
    let decisions = Arc::new(ScriptedDecisions::new([Decision::Approve]));
    let done = run_catalog("model", &model_params(), decisions, tmp.path(), 42);
    assert_eq!(done.result.status, RunStatus::Aborted);
    assert_eq!(done.result.stats.checkpoints, 2);
}

#[test]
fn revise_with_rerun_shows_feedback_to_the_rerun_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let feedback = "Add financial frictions component";
    let decisions = Arc::new(ScriptedDecisions::new([
        Decision::revise(feedback, true),
        Decision::Approve,
        Decision::Approve,
    ]));
    let done = run_catalog("model", &model_params(), decisions, tmp.path(), 42);
    assert_eq!(done.result.status, RunStatus::Completed);
    assert_eq!(outputs_of(&done.run, "Theorist"), 2);
    let events = agentloom_core::provenance::read_event_log(&done.dir.unwrap().join("events.jsonl")).unwrap();
    let feedback_seq = events
        .iter()
        .flatten()
        .find(|e| e.kind == EventKind::Message && e.payload["message"]["kind"] == "human-feedback")
        .map(|e| e.seq)
        .expect("feedback message");
    let rerun_call = events
        .iter()
        .flatten()
        .find(|e| {
            e.kind == EventKind::BackendCall && e.payload_str("caller") == Some("Theorist") && e.seq > feedback_seq
        })
        .expect("theorist called again");
    let dialogue = rerun_call.payload["request"]["dialogue"].as_array().unwrap();
    assert!(dialogue.iter().any(|d| d["text"].as_str().unwrap().contains(feedback)));
}

#[test]
fn revise_without_rerun_moves_forward() {
    let tmp = tempfile::tempdir().unwrap();
    let decisions = Arc::new(ScriptedDecisions::new([
        Decision::Revise {
            feedback: "Keep it small".into(),
            rerun: Some(false),
            task: Some("Formalize a three-equation model.".into()),
        },
        Decision::Approve,
        Decision::Approve,
    ]));
    let done = run_catalog("model", &model_params(), decisions, tmp.path(), 42);
    assert_eq!(done.result.status, RunStatus::Completed);
    assert_eq!(outputs_of(&done.run, "Theorist"), 1);
    let design_task = done
        .run
        .transcript
        .iter()
        .filter(|m| m.kind == MessageKind::Task)
        .nth(1)
        .unwrap();
    assert!(design_task.content.starts_with("Formalize a three-equation model."));
}

#[test]
fn autonomous_ideation_skips_enrichment() {
    let tmp = tempfile::tempdir().unwrap();
    let done = run_catalog("ideation", &Params::new(), auto(), tmp.path(), 42);
    assert_eq!(done.result.status, RunStatus::Completed);
    assert_eq!(outputs_of(&done.run, "IdeaEnricher"), 0);
    assert!(done.run.stage_artifacts.contains_key("synthesis"));
}

#[test]
fn search_artifact_feeds_analysis() {
    let tmp = tempfile::tempdir().unwrap();
    let params = text(&[("topic", "fiscal multipliers")]);
    let done = run_catalog("literature", &params, auto(), tmp.path(), 42);
    let search = &done.run.stage_artifacts["search"].content;
    let analysis_task = done
        .run
        .transcript
        .iter()
        .filter(|m| m.kind == MessageKind::Task)
        .nth(1)
        .unwrap();
    assert!(analysis_task.content.contains("## Input from search"));
    assert!(analysis_task.content.contains(search.trim()));
}

fn roster_doc(enabled: &[bool], k: u32) -> String {
    let mut doc = String::from("name = \"fair\"\nversion = \"1\"\n");
    for (i, on) in enabled.iter().enumerate() {
        doc += &format!("\n[[agents]]\nname = \"A{i}\"\nsystem_message = \"m\"\nenabled = {on}\n");
    }
    let roster: Vec<String> = (0..enabled.len()).map(|i| format!("\"A{i}\"")).collect();
    doc += &format!(
        "\n[[stages]]\nid = \"talk\"\nroster = [{}]\nscheduling = \"round-robin\"\ntermination = {{ all-spoken = {k} }}\nturn_limit = 100\n",
        roster.join(", ")
    );
    doc
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

    /// Every enabled agent speaks exactly k times, in roster order.
    #[test]
    fn round_robin_is_fair(enabled in proptest::collection::vec(proptest::bool::weighted(0.75), 1..6), k in 1u32..5) {
        proptest::prop_assume!(enabled.iter().any(|e| *e));
        let r = run_inline(&roster_doc(&enabled, k), "default_reply = \"{agent} turn {turn}\"\n", &Params::new(), auto(), stock_registry());
        proptest::prop_assert_eq!(r.result.status, RunStatus::Completed);
        let speakers: Vec<&str> = r.run.transcript.iter()
            .filter(|m| m.kind == MessageKind::AgentOutput)
            .map(|m| m.sender.as_str())
            .collect();
        let order: Vec<String> = enabled.iter().enumerate().filter(|(_, e)| **e).map(|(i, _)| format!("A{i}")).collect();
        let expected: Vec<&str> = (0..k).flat_map(|_| order.iter().map(String::as_str)).collect();
        proptest::prop_assert_eq!(speakers, expected);
    }
}
