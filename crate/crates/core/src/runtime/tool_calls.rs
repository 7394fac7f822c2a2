use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::backend::{Completion, FinishReason};

/// A structurally valid tool call: a name and an argument object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub name: String,
    pub arguments: Value,
}

/// Extracts tool invocations from a completion. Prose-only completions give
/// an empty list; any malformed call rejects the whole completion.
pub fn parse_tool_calls(completion: &Completion) -> Result<Vec<ToolInvocation>, String> {
    if !completion.is_well_formed() {
        return Err("finish reason is tool-calls but no calls were made".into());
    }
    if completion.finish == FinishReason::Error {
        return Err("completion finished with an error".into());
    }
    completion
        .tool_calls
        .iter()
        .map(|call| {
            if call.name.trim().is_empty() {
                return Err("tool call without a name".to_string());
            }
            let raw = call.arguments.trim();
            let arguments = if raw.is_empty() {
                Value::Object(Default::default())
            } else {
                serde_json::from_str::<Value>(raw)
                    .map_err(|e| format!("arguments for `{}` are not valid JSON: {e}", call.name))?
            };
            if !arguments.is_object() {
                return Err(format!("arguments for `{}` must be an object", call.name));
            }
            Ok(ToolInvocation {
                name: call.name.clone(),
                arguments,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::ToolCallRequest;

    fn call(name: &str, args: &str) -> ToolCallRequest {
        ToolCallRequest {
            name: name.into(),
            arguments: args.into(),
        }
    }

    #[test]
    fn one_well_formed_call() {
        let c = Completion::with_tool_calls("", vec![call("arxiv_search", r#"{"query":"x","max_results":3}"#)]);
        let got = parse_tool_calls(&c).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].arguments["max_results"], 3);
    }

    #[test]
    fn prose_gives_nothing() {
        assert!(parse_tool_calls(&Completion::stop("just words")).unwrap().is_empty());
    }

    #[test]
    fn malformed_arguments_are_rejected() {
        let c = Completion::with_tool_calls("", vec![call("arxiv_search", "{query: x")]);
        assert!(parse_tool_calls(&c).is_err());
        let c = Completion::with_tool_calls("", vec![call("arxiv_search", "[1]")]);
        assert!(parse_tool_calls(&c).is_err());
        let c = Completion {
            text: String::new(),
            tool_calls: vec![],
            finish: FinishReason::ToolCalls,
        };
        assert!(parse_tool_calls(&c).is_err());
    }
}
