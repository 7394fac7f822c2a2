use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::message::Message;
use crate::spec::{AgentSpec, ModelBinding};
use crate::toolkit::ToolSpec;

/// Default number of visible transcript messages shown to an agent.
pub const DEFAULT_WINDOW: usize = 50;

pub const TASK_SPEAKER: &str = "task";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueEntry {
    pub speaker: String,
    pub text: String,
}

impl DialogueEntry {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            speaker: speaker.into(),
            text: text.into(),
        }
    }
}

/// Menu entry describing a tool to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSummary {
    pub name: String,
    pub description: String,
    /// JSON-schema object describing the arguments.
    pub parameters: Value,
}

impl From<&ToolSpec> for ToolSummary {
    fn from(spec: &ToolSpec) -> Self {
        Self {
            name: spec.name.clone(),
            description: spec.description.clone(),
            parameters: spec.argument_schema(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DecodeParams {
    pub fn from_binding(binding: &ModelBinding, run_seed: u64) -> Self {
        Self {
            temperature: binding.temperature,
            max_output_tokens: binding.max_output_tokens,
            seed: binding.seeded.then_some(run_seed),
        }
    }
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: 1024,
            seed: None,
        }
    }
}

/// Key a backend call is filed under: the calling agent (or `agent/tool` for
/// prompt-template tools) and that caller's 0-based call index in the run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestKey {
    pub caller: String,
    pub turn: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub key: RequestKey,
    /// Model binding name from the pipeline spec.
    pub binding: String,
    /// Provider model identifier, when the binding names one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub system: String,
    pub dialogue: Vec<DialogueEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_menu: Vec<ToolSummary>,
    pub decode: DecodeParams,
}

impl ModelRequest {
    pub fn dialogue_contains(&self, needle: &str) -> bool {
        self.dialogue.iter().any(|d| d.text.contains(needle))
    }
}

/// Builds the dialogue an agent sees: the task followed by the last `window`
/// visible messages (agent output, tool results, human feedback).
pub fn assemble_dialogue(transcript: &[Message], task: &str, window: usize) -> Vec<DialogueEntry> {
    let window = window.max(1);
    let visible: Vec<&Message> = transcript.iter().filter(|m| m.kind.is_visible()).collect();
    let start = visible.len().saturating_sub(window);
    std::iter::once(DialogueEntry::new(TASK_SPEAKER, task))
        .chain(
            visible[start..]
                .iter()
                .map(|m| DialogueEntry::new(speaker_of(m), m.content.clone())),
        )
        .collect()
}

/// Tool results are attributed to `agent/tool` so they never read as the
/// agent's own words.
fn speaker_of(m: &Message) -> String {
    match m.kind {
        crate::message::MessageKind::ToolResult => tool_speaker(&m.sender),
        _ => m.sender.clone(),
    }
}

pub fn tool_speaker(agent: &str) -> String {
    format!("{agent}/tool")
}

/// Assembles the request for one agent completion. The caller fills in the
/// request key and decode parameters; the tool menu lists exactly the
/// agent's tools (unknown names are skipped, validation reports those).
pub fn assemble_request(
    agent: &AgentSpec,
    transcript: &[Message],
    task: &str,
    window: usize,
    tools: &crate::toolkit::ToolRegistry,
) -> ModelRequest {
    ModelRequest {
        key: RequestKey {
            caller: agent.name.clone(),
            turn: 0,
        },
        binding: agent.model.clone(),
        model: None,
        system: agent.system_message.clone(),
        dialogue: assemble_dialogue(transcript, task, window),
        tool_menu: agent
            .tools
            .iter()
            .filter_map(|t| tools.spec(t))
            .map(|s| ToolSummary::from(&s))
            .collect(),
        decode: DecodeParams::default(),
    }
}
