use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PipelineSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamType {
    Text,
    Integer,
    Number,
    Boolean,
    /// Comma-separated list of text items.
    List,
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamType::Text => "text",
            ParamType::Integer => "integer",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
            ParamType::List => "list",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Boolean(bool),
    Integer(i64),
    Number(f64),
    Text(String),
    List(Vec<String>),
}

impl ParamValue {
    pub fn type_of(&self) -> ParamType {
        match self {
            ParamValue::Boolean(_) => ParamType::Boolean,
            ParamValue::Integer(_) => ParamType::Integer,
            ParamValue::Number(_) => ParamType::Number,
            ParamValue::Text(_) => ParamType::Text,
            ParamValue::List(_) => ParamType::List,
        }
    }

    pub fn matches(&self, ty: ParamType) -> bool {
        self.type_of() == ty || (ty == ParamType::Number && matches!(self, ParamValue::Integer(_)))
    }

    /// True for empty text and empty lists.
    pub fn is_empty(&self) -> bool {
        match self {
            ParamValue::Text(s) => s.trim().is_empty(),
            ParamValue::List(v) => v.is_empty(),
            _ => false,
        }
    }

    /// Parses a command-line string as the declared type.
    pub fn parse_as(ty: ParamType, raw: &str) -> Result<Self, String> {
        match ty {
            ParamType::Text => Ok(ParamValue::Text(raw.to_string())),
            ParamType::Integer => raw
                .trim()
                .parse()
                .map(ParamValue::Integer)
                .map_err(|_| format!("`{raw}` is not an integer")),
            ParamType::Number => raw
                .trim()
                .parse()
                .map(ParamValue::Number)
                .map_err(|_| format!("`{raw}` is not a number")),
            ParamType::Boolean => match raw.trim() {
                "true" | "yes" | "1" => Ok(ParamValue::Boolean(true)),
                "false" | "no" | "0" => Ok(ParamValue::Boolean(false)),
                _ => Err(format!("`{raw}` is not a boolean")),
            },
            ParamType::List => Ok(ParamValue::List(
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect(),
            )),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Boolean(b) => write!(f, "{b}"),
            ParamValue::Integer(i) => write!(f, "{i}"),
            ParamValue::Number(x) => write!(f, "{x}"),
            ParamValue::Text(s) => f.write_str(s),
            ParamValue::List(items) => f.write_str(&items.join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub ty: ParamType,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<ParamValue>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("missing or empty required parameter `{0}`")]
    Missing(String),
    #[error("parameter `{name}` expects {expected}, got {got}")]
    TypeMismatch {
        name: String,
        expected: ParamType,
        got: ParamType,
    },
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("parameter `{name}`: {message}")]
    Invalid { name: String, message: String },
}

/// Checks supplied values against the declarations and fills defaults.
/// Optional parameters without a default stay absent.
pub fn bind_params(spec: &PipelineSpec, supplied: &Params) -> Result<Params, ParamError> {
    if let Some(name) = supplied.keys().find(|k| !spec.params.contains_key(*k)) {
        return Err(ParamError::Unknown(name.clone()));
    }
    let mut bound = Params::new();
    for (name, decl) in &spec.params {
        let value = match supplied.get(name) {
            Some(v) => {
                if !v.matches(decl.ty) {
                    return Err(ParamError::TypeMismatch {
                        name: name.clone(),
                        expected: decl.ty,
                        got: v.type_of(),
                    });
                }
                Some(v.clone())
            }
            None => decl.default.clone(),
        };
        match value {
            Some(v) if v.is_empty() && decl.required => return Err(ParamError::Missing(name.clone())),
            Some(v) if v.is_empty() => {}
            Some(v) => {
                bound.insert(name.clone(), v);
            }
            None if decl.required => return Err(ParamError::Missing(name.clone())),
            None => {}
        }
    }
    Ok(bound)
}
