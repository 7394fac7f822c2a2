use std::fs;
use std::path::Path;

use agentloom_core::catalog;
use agentloom_core::spec::{
    load_pipeline_spec, parse_pipeline_spec, to_document, validate_pipeline_spec, AgentSpec, EntryBinding,
    EscalationPolicy, PipelineSpec, Scheduling, SpecError, StageSpec, TerminationCondition, ViolationKind,
};
use agentloom_core::toolkit::stock_registry;
use proptest::prelude::*;

fn spec_error_class(e: &SpecError) -> &'static str {
    match e {
        SpecError::Parse { .. } => "parse",
        SpecError::UnknownKey { .. } => "unknown-key",
        SpecError::MissingKey { .. } => "missing-key",
        SpecError::TypeMismatch { .. } => "type-mismatch",
        SpecError::UnknownReference { .. } => "unknown-reference",
    }
}

#[test]
fn shipped_catalog_validates_cleanly() {
    let known = stock_registry().names();
    assert_eq!(catalog::catalog().len(), 7);
    for entry in catalog::entries() {
        let spec = load_pipeline_spec(entry.document).unwrap();
        let report = validate_pipeline_spec(&spec, &known);
        assert!(report.is_ok(), "{}: {:?}", entry.name, report.violations);
        assert_eq!(load_pipeline_spec(&to_document(&spec)).unwrap(), spec, "{}", entry.name);
    }
}

#[test]
fn declared_checkpoint_counts() {
    let counts: Vec<(&str, usize)> = ["ideation", "literature", "model", "data"]
        .into_iter()
        .map(|n| (n, catalog::entry(n).unwrap().checkpoints))
        .collect();
    assert_eq!(counts, [("ideation", 1), ("literature", 3), ("model", 3), ("data", 4)]);
    for n in ["implementation", "estimation", "reporting"] {
        assert!(!catalog::entry(n).unwrap().concrete);
    }
}

#[test]
fn broken_corpus_yields_expected_class() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/broken_specs");
    let known = stock_registry().names();
    let mut checked = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let doc = fs::read_to_string(&path).unwrap();
        let expected = doc
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# expect: "))
            .unwrap_or_else(|| panic!("{} lacks an expect header", path.display()))
            .trim()
            .to_string();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        match (expected.strip_prefix("error:"), parse_pipeline_spec(&doc)) {
            (Some(class), Err(e)) => assert_eq!(spec_error_class(&e), class, "{name}: {e}"),
            (Some(_), Ok(_)) => panic!("{name}: parsed but should not"),
            (None, Err(e)) => panic!("{name}: does not parse: {e}"),
            (None, Ok(spec)) => {
                let kinds = validate_pipeline_spec(&spec, &known).kinds();
                let want: ViolationKind = serde_json::from_value(serde_json::json!(expected)).unwrap();
                assert_eq!(kinds, [want].into(), "{name}");
            }
        }
        checked += 1;
    }
    assert!(checked >= 10);
}

fn ident() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9_]{0,8}"
}

fn termination() -> impl Strategy<Value = TerminationCondition> {
    prop_oneof![
        "[A-Z]{1,10}".prop_map(TerminationCondition::Sentinel),
        (1u32..50).prop_map(TerminationCondition::MaxTurns),
        (1u32..5).prop_map(TerminationCondition::AllSpoken),
    ]
}

fn arb_spec() -> impl Strategy<Value = PipelineSpec> {
    let agents = prop::collection::btree_set(ident(), 1..5);
    (
        ident(),
        agents,
        prop::collection::vec((termination(), any::<bool>(), 0usize..3, ".{0,40}"), 1..4),
    )
        .prop_map(|(name, agent_names, stages)| {
            let names: Vec<String> = agent_names.into_iter().collect();
            let agents = names
                .iter()
                .map(|n| AgentSpec {
                    name: n.clone(),
                    description: String::new(),
                    system_message: format!("You are {n}."),
                    tools: vec!["echo".into()],
                    model: "primary".into(),
                    escalation: EscalationPolicy::default(),
                    enabled: true,
                })
                .collect();
            let stages = stages
                .into_iter()
                .enumerate()
                .map(|(i, (termination, sequential, take, task))| StageSpec {
                    id: format!("s{i}"),
                    roster: names.iter().take(take + 1).cloned().collect(),
                    scheduling: if sequential {
                        Scheduling::Sequential
                    } else {
                        Scheduling::RoundRobin
                    },
                    task,
                    entry: EntryBinding {
                        stages: (0..i).map(|j| format!("s{j}")).collect(),
                        ..Default::default()
                    },
                    termination,
                    join: None,
                    when: None,
                    model: None,
                    turn_limit: Some(10),
                    loop_limit: None,
                    checkpoint: None,
                    fallbacks: Vec::new(),
                })
                .collect();
            PipelineSpec {
                name,
                version: "1".into(),
                description: String::new(),
                params: Default::default(),
                models: Default::default(),
                agents,
                stages,
            }
        })
}

proptest! {
    #[test]
    fn documents_round_trip(spec in arb_spec()) {
        let doc = to_document(&spec);
        prop_assert_eq!(load_pipeline_spec(&doc).unwrap(), spec);
    }
}
