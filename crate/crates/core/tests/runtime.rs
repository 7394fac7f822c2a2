use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use agentloom_core::message::{contains_word, MessageKind};
use agentloom_core::orchestrator::{EscalationAction, EscalationIssue};
use agentloom_core::provenance::EventKind;
use agentloom_core::runtime::{
    step_agent, Backend, BackendErrorKind, CallCounters, Completion, DecodeParams, DialogueEntry, HttpBackend,
    ModelRequest, RequestKey, ScriptedBackend, ScriptedBackendScript, ToolCallRequest, TurnContext, TurnOutcome,
    TurnRecord, TurnResult,
};
use agentloom_core::spec::{AgentSpec, EscalationPolicy, ModelBinding};
use agentloom_core::toolkit::{stock_registry, SemanticType, ToolContext, ToolParam, ToolRegistry, ToolSpec};
use proptest::prelude::*;
use serde_json::{json, Map, Value};

fn agent(tools: &[&str], max_retries: u32) -> AgentSpec {
    AgentSpec {
        name: "Cleaner".into(),
        description: String::new(),
        system_message: "You clean data.".into(),
        tools: tools.iter().map(|t| t.to_string()).collect(),
        model: "primary".into(),
        escalation: EscalationPolicy {
            max_retries,
            handler_agent: None,
            then_human: false,
        },
        enabled: true,
    }
}

fn call(name: &str, arguments: &str) -> Completion {
    Completion::with_tool_calls(
        "",
        vec![ToolCallRequest {
            name: name.into(),
            arguments: arguments.into(),
        }],
    )
}

fn turn(agent: &AgentSpec, replies: Vec<Completion>, tools: &ToolRegistry) -> TurnOutcome {
    let mut script = ScriptedBackendScript::default();
    for (i, c) in replies.into_iter().enumerate() {
        script.push(agent.name.clone(), i as u32, c);
    }
    let backend = ScriptedBackend::new(script);
    let counters = CallCounters::default();
    let ctx = TurnContext {
        agent,
        binding_name: "primary".into(),
        binding: ModelBinding::default(),
        seed: 1,
        transcript: &[],
        task: "Fill the gaps.",
        window: 20,
        loop_limit: 5,
        note: None,
        anchor: None,
        backend: &backend,
        tools,
        counters: &counters,
        fixtures: true,
        work_dir: None,
        recorded: None,
        budget: None,
        handler_turn: false,
    };
    step_agent(&ctx)
}

fn kinds(outcome: &TurnOutcome) -> Vec<MessageKind> {
    outcome.messages().map(|m| m.kind).collect()
}

fn events(outcome: &TurnOutcome, kind: EventKind) -> Vec<&Value> {
    outcome
        .records
        .iter()
        .filter_map(|r| match r {
            TurnRecord::Event { kind: k, payload, .. } if *k == kind => Some(payload),
            _ => None,
        })
        .collect()
}

#[test]
fn one_tool_call_gives_call_result_and_output() {
    let a = agent(&["impute_missing"], 2);
    let out = turn(
        &a,
        vec![
            call("impute_missing", r#"{"series": [2.0, null, null, 8.0]}"#),
            Completion::stop("Filled."),
        ],
        &stock_registry(),
    );
    assert_eq!(out.result, TurnResult::Completed);
    assert_eq!(
        kinds(&out),
        [MessageKind::ToolCall, MessageKind::ToolResult, MessageKind::AgentOutput]
    );
    let result = out.messages().nth(1).unwrap();
    assert_eq!(
        serde_json::from_str::<Value>(&result.content).unwrap(),
        json!([2.0, 4.0, 6.0, 8.0])
    );
    assert_eq!(events(&out, EventKind::BackendCall).len(), 2);
}

#[test]
fn malformed_arguments_retry_then_succeed() {
    let a = agent(&["impute_missing"], 2);
    let out = turn(
        &a,
        vec![
            call("impute_missing", "{not json"),
            call("impute_missing", r#"{"series": [1.0, null, 3.0]}"#),
            Completion::stop("Done."),
        ],
        &stock_registry(),
    );
    assert_eq!(out.result, TurnResult::Completed);
    let esc = events(&out, EventKind::Escalation);
    assert_eq!(esc.len(), 1);
    assert_eq!(esc[0]["action"], "retry");
}

#[test]
fn unknown_tool_is_malformed_and_fails_without_handler() {
    let a = agent(&["impute_missing"], 1);
    let out = turn(
        &a,
        vec![call("drop_table", "{}"), call("drop_table", "{}")],
        &stock_registry(),
    );
    match &out.result {
        TurnResult::Escalated { event, action } => {
            assert_eq!(event.issue, EscalationIssue::MalformedCompletion);
            assert_eq!(event.attempt, 2);
            assert_eq!(*action, EscalationAction::FailStage);
        }
        other => panic!("expected escalation, got {other:?}"),
    }
    assert_eq!(kinds(&out), []);
}

#[test]
fn failing_tool_is_attempted_retries_plus_one_times() {
    let reg = ToolRegistry::new();
    let runs = Arc::new(AtomicU32::new(0));
    let r = runs.clone();
    reg.register(
        ToolSpec::pure("boom", "always fails", vec![], SemanticType::Text),
        move |_: &Map<String, Value>, _: &ToolContext<'_>| {
            r.fetch_add(1, Ordering::SeqCst);
            Err(agentloom_core::toolkit::ToolError::failed("boom", "no"))
        },
    )
    .unwrap();
    let a = agent(&["boom"], 2);
    let out = turn(&a, vec![call("boom", "{}"); 3], &reg);
    assert_eq!(runs.load(Ordering::SeqCst), 3);
    let actions: Vec<&Value> = events(&out, EventKind::Escalation)
        .iter()
        .map(|e| &e["action"])
        .collect();
    assert_eq!(actions, [&json!("retry"), &json!("retry"), &json!("fail-stage")]);
}

#[test]
fn quality_flag_escalates() {
    let a = agent(&[], 0);
    let out = turn(
        &a,
        vec![Completion::stop("Numbers look off. QUALITY_FLAG")],
        &stock_registry(),
    );
    assert!(matches!(
        out.result,
        TurnResult::Escalated { ref event, .. } if event.issue == EscalationIssue::QualityFlag
    ));
}

#[test]
fn word_matching_respects_boundaries() {
    assert!(contains_word("done. TERMINATE", "TERMINATE"));
    assert!(contains_word("TERMINATE\n", "TERMINATE"));
    assert!(contains_word("(TERMINATE)", "TERMINATE"));
    assert!(!contains_word("NOTTERMINATE", "TERMINATE"));
    assert!(!contains_word("TERMINATED", "TERMINATE"));
    assert!(!contains_word("TERMINATE_NOW", "TERMINATE"));
    assert!(!contains_word("anything", ""));
}

proptest! {
    #[test]
    fn embedded_token_is_never_a_word(pre in "[a-z0-9_]{1,5}", post in "[a-z0-9_]{0,5}") {
        prop_assert!(!contains_word(&[pre.as_str(), "TERMINATE", post.as_str()].concat(), "TERMINATE"));
    }

    #[test]
    fn separated_token_is_a_word(pre in "[a-z ]{0,10}", sep in "[ .,;:!\n()]", post in "[ .!\n]{0,3}") {
        prop_assert!(contains_word(&[pre.as_str(), sep.as_str(), "TERMINATE", post.as_str()].concat(), "TERMINATE"));
    }

    /// Arguments failing the declared schema never reach the implementation.
    #[test]
    fn invalid_arguments_never_execute(args in prop_oneof![
        Just(json!({})),
        any::<i64>().prop_map(|n| json!({"text": n})),
        "[a-z]{1,6}".prop_map(|k| json!({"text": "x", k: 1})),
        any::<bool>().prop_map(|b| json!({"text": "x", "n": b})),
        Just(json!([1, 2])),
    ]) {
        let runs = Arc::new(AtomicU32::new(0));
        let r = runs.clone();
        let reg = ToolRegistry::new();
        reg.register(
            ToolSpec::pure(
                "echo",
                "echo",
                vec![
                    ToolParam::required("text", SemanticType::Text, ""),
                    ToolParam::optional("n", SemanticType::Integer, ""),
                ],
                SemanticType::Text,
            ),
            move |a: &Map<String, Value>, _: &ToolContext<'_>| {
                r.fetch_add(1, Ordering::SeqCst);
                Ok(a["text"].clone())
            },
        )
        .unwrap();
        let valid = args.get("text") == Some(&json!("x"))
            && args.as_object().is_some_and(|o| o.keys().all(|k| k == "text" || k == "n"))
            && args.get("n").is_none_or(Value::is_i64);
        prop_assume!(!valid);
        prop_assert!(reg.invoke("echo", &args, &ToolContext::default()).is_err());
        prop_assert_eq!(runs.load(Ordering::SeqCst), 0);
    }
}

/// `(authorization, body)` of each request the mock server saw.
type Captured = Arc<Mutex<Vec<(String, Value)>>>;

/// Minimal chat-completions server answering each request with the next
/// canned `(status, body)` and capturing the requests.
fn mock_server(responses: Vec<(u16, Value)>) -> (String, Captured) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let (mut len, mut auth) = (0, String::new());
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line["authorization:".len()..].trim().to_string();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push((auth, serde_json::from_slice(&buf).unwrap()));
            let text = body.to_string();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                text.len()
            )
            .unwrap();
        }
    });
    (base, seen)
}

fn request() -> ModelRequest {
    ModelRequest {
        key: RequestKey {
            caller: "Theorist".into(),
            turn: 0,
        },
        binding: "primary".into(),
        model: None,
        system: "You build models.".into(),
        dialogue: vec![DialogueEntry::new("task", "Propose a framework.")],
        tool_menu: Vec::new(),
        decode: DecodeParams::default(),
    }
}

#[test]
fn http_backend_retries_server_errors_and_parses_tool_calls() {
    let ok = json!({"choices": [{"finish_reason": "tool_calls", "message": {"content": null, "tool_calls": [
        {"id": "c1", "type": "function", "function": {"name": "scholar_search_tool", "arguments": "{\"query\": \"dsge\"}"}}
    ]}}]});
    let (base, seen) = mock_server(vec![(503, json!({})), (200, ok)]);
    let backend = HttpBackend::with_timeout(base, Some("k-123".into()), "m-test", Duration::from_secs(5))
        .with_backoff(2, Duration::from_millis(10));
    let c = backend.complete(&request()).unwrap();
    assert_eq!(c.tool_calls[0].name, "scholar_search_tool");
    assert_eq!(c.tool_calls[0].arguments, r#"{"query": "dsge"}"#);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].0, "Bearer k-123");
    assert_eq!(seen[1].1["model"], "m-test");
    assert_eq!(seen[1].1["messages"][0]["role"], "system");
}

#[test]
fn http_backend_reports_client_errors_as_protocol() {
    let (base, _) = mock_server(vec![(400, json!({"error": "bad"}))]);
    let backend = HttpBackend::with_timeout(base, None, "m", Duration::from_secs(5));
    let err = backend.complete(&request()).unwrap_err();
    assert_eq!(err.kind, BackendErrorKind::Protocol);
    assert!(!err.is_fatal());
}

#[test]
fn http_backend_unreachable_is_fatal() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = HttpBackend::with_timeout(format!("http://127.0.0.1:{port}"), None, "m", Duration::from_secs(2));
    let err = backend.complete(&request()).unwrap_err();
    assert_eq!(err.kind, BackendErrorKind::Transport);
    assert!(err.is_fatal());
}
