use thiserror::Error;

use super::PipelineSpec;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown key `{key}` at line {line}, column {column}")]
    UnknownKey { key: String, line: usize, column: usize },
    #[error("missing key `{key}` at line {line}, column {column}")]
    MissingKey { key: String, line: usize, column: usize },
    #[error("type mismatch at line {line}, column {column}: {message}")]
    TypeMismatch {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{context} references unknown {kind} `{name}`")]
    UnknownReference {
        kind: &'static str,
        name: String,
        context: String,
    },
}

fn line_col(doc: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(doc.len());
    let before = &doc[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    (line, column)
}

fn backticked(message: &str) -> String {
    message.split('`').nth(1).map(String::from).unwrap_or_default()
}

/// Parses a pipeline document without checking cross references.
pub fn parse_pipeline_spec(document: &str) -> Result<PipelineSpec, SpecError> {
    toml::from_str::<PipelineSpec>(document).map_err(|err| {
        let (line, column) = err.span().map_or((1, 1), |s| line_col(document, s.start));
        let message = err.message().trim().to_string();
        if message.starts_with("unknown field") || message.starts_with("unknown variant") {
            SpecError::UnknownKey {
                key: backticked(&message),
                line,
                column,
            }
        } else if message.starts_with("missing field") {
            SpecError::MissingKey {
                key: backticked(&message),
                line,
                column,
            }
        } else if message.starts_with("invalid type")
            || message.starts_with("invalid value")
            || message.starts_with("data did not match")
        {
            SpecError::TypeMismatch { line, column, message }
        } else {
            SpecError::Parse { line, column, message }
        }
    })
}

/// Parses a pipeline document and rejects dangling agent references.
///
/// Full invariant checking (tools, bindings, fallbacks, ...) is the job of
/// [`super::validate_pipeline_spec`].
pub fn load_pipeline_spec(document: &str) -> Result<PipelineSpec, SpecError> {
    let spec = parse_pipeline_spec(document)?;
    for stage in &spec.stages {
        for name in &stage.roster {
            if spec.agent(name).is_none() {
                return Err(SpecError::UnknownReference {
                    kind: "agent",
                    name: name.clone(),
                    context: format!("stage `{}`", stage.id),
                });
            }
        }
    }
    for agent in &spec.agents {
        if let Some(handler) = &agent.escalation.handler_agent {
            if spec.agent(handler).is_none() {
                return Err(SpecError::UnknownReference {
                    kind: "agent",
                    name: handler.clone(),
                    context: format!("escalation policy of `{}`", agent.name),
                });
            }
        }
    }
    Ok(spec)
}

/// Serializes a spec back into the document format.
pub fn to_document(spec: &PipelineSpec) -> String {
    toml::to_string(spec).expect("pipeline specs always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_col_is_one_based() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
