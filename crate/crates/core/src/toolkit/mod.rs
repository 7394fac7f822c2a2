//! Tool registry and the shipped tools.

pub mod arxiv;
pub mod citations;
pub mod data;
pub mod fixtures;
pub mod prompt;
mod registry;
pub mod series;
mod stubs;
pub mod web;

use std::sync::OnceLock;
use std::time::Duration;

pub use prompt::make_prompt_tool;
pub use registry::{
    Effect, RetryPolicy, SemanticType, Tool, ToolContext, ToolError, ToolParam, ToolRegistry, ToolSpec,
    DEFAULT_TOOL_TIMEOUT,
};

/// Registry with every shipped tool: concrete research and data tools,
/// fixture-backed stubs, extraction clients and prompt-template tools.
pub fn stock_registry() -> ToolRegistry {
    let reg = ToolRegistry::new();
    let all = [
        arxiv::register,
        web::register,
        citations::register,
        data::register,
        stubs::register,
        prompt::register,
    ];
    for register in all {
        register(&reg).expect("shipped tool names are unique");
    }
    reg
}

pub(crate) fn http_client() -> &'static reqwest::blocking::Client {
    static CLIENT: OnceLock<reqwest::blocking::Client> = OnceLock::new();
    CLIENT.get_or_init(|| {
        reqwest::blocking::Client::builder()
            .timeout(DEFAULT_TOOL_TIMEOUT)
            .connect_timeout(Duration::from_secs(10))
            .user_agent(concat!("agentloom/", env!("CARGO_PKG_VERSION")))
            .build()
            .expect("http client")
    })
}

pub(crate) fn transport_error(tool: &str, e: &reqwest::Error) -> ToolError {
    if e.is_timeout() {
        ToolError::Timeout { tool: tool.into() }
    } else {
        ToolError::transient(tool, format!("transport failure: {e}"))
    }
}

/// 429 and 5xx are worth retrying; other failures are not.
pub(crate) fn status_error(tool: &str, status: u16) -> ToolError {
    let message = format!("non-success status {status}");
    if status == 429 || status >= 500 {
        ToolError::transient(tool, message)
    } else {
        ToolError::failed(tool, message)
    }
}

pub(crate) fn http_get(tool: &str, url: &str) -> Result<String, ToolError> {
    let resp = http_client().get(url).send().map_err(|e| transport_error(tool, &e))?;
    let status = resp.status();
    if !status.is_success() {
        return Err(status_error(tool, status.as_u16()));
    }
    resp.text().map_err(|e| transport_error(tool, &e))
}
