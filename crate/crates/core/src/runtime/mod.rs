//! Single agent turns: request assembly, model backends and the bounded
//! tool-call loop.

mod backend;
pub mod http;
mod request;
pub mod scripted;
mod tool_calls;
mod turn;

pub use backend::{
    Backend, BackendDescriptor, BackendError, BackendErrorKind, BackendKind, Completion, FinishReason, ToolCallRequest,
};
pub use http::HttpBackend;
pub use request::{
    assemble_dialogue, assemble_request, tool_speaker, DecodeParams, DialogueEntry, ModelRequest, RequestKey,
    ToolSummary, DEFAULT_WINDOW, TASK_SPEAKER,
};
pub use scripted::{ScriptError, ScriptedBackend, ScriptedBackendScript};
pub use tool_calls::{parse_tool_calls, ToolInvocation};
pub use turn::{
    step_agent, CallCounters, MessageDraft, ModelAccess, ParentRef, RecordedToolResults, TurnContext, TurnOutcome,
    TurnRecord, TurnResult, QUALITY_FLAG,
};
