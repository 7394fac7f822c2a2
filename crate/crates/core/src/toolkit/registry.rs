use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::provenance::digest::digest_of;
use crate::runtime::{BackendError, ModelAccess};

/// Argument and result types tools declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticType {
    Text,
    Url,
    Integer,
    Number,
    Boolean,
    TextList,
    /// Array of numbers where `null` marks a missing observation.
    NumberSeries,
    /// A serialized `SeriesTable`.
    Table,
    TableList,
    Citations,
    /// Any structured document.
    Document,
    DocumentList,
}

impl SemanticType {
    fn json_schema(self) -> Value {
        match self {
            SemanticType::Text => json!({"type": "string"}),
            SemanticType::Url => json!({"type": "string", "format": "uri"}),
            SemanticType::Integer => json!({"type": "integer"}),
            SemanticType::Number => json!({"type": "number"}),
            SemanticType::Boolean => json!({"type": "boolean"}),
            SemanticType::TextList => json!({"type": "array", "items": {"type": "string"}}),
            SemanticType::NumberSeries => json!({"type": "array", "items": {"type": ["number", "null"]}}),
            SemanticType::Table | SemanticType::Document => json!({"type": "object"}),
            SemanticType::TableList | SemanticType::Citations | SemanticType::DocumentList => {
                json!({"type": "array", "items": {"type": "object"}})
            }
        }
    }

    /// Shallow structural check of a JSON argument.
    pub fn accepts(self, v: &Value) -> bool {
        match self {
            SemanticType::Text => v.is_string(),
            SemanticType::Url => v.as_str().is_some_and(|s| url::Url::parse(s).is_ok()),
            SemanticType::Integer => v.is_i64() || v.is_u64(),
            SemanticType::Number => v.is_number(),
            SemanticType::Boolean => v.is_boolean(),
            SemanticType::TextList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
            SemanticType::NumberSeries => v
                .as_array()
                .is_some_and(|a| a.iter().all(|x| x.is_number() || x.is_null())),
            SemanticType::Table | SemanticType::Document => v.is_object(),
            SemanticType::TableList | SemanticType::Citations | SemanticType::DocumentList => {
                v.as_array().is_some_and(|a| a.iter().all(Value::is_object))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolParam {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: SemanticType,
    pub required: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

impl ToolParam {
    pub fn required(name: &str, ty: SemanticType, description: &str) -> Self {
        Self {
            name: name.into(),
            ty,
            required: true,
            description: description.into(),
        }
    }

    pub fn optional(name: &str, ty: SemanticType, description: &str) -> Self {
        Self {
            required: false,
            ..Self::required(name, ty, description)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Effect {
    Pure,
    Network,
    Filesystem,
}

pub const DEFAULT_TOOL_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max: u32,
    #[serde(with = "millis")]
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max: 0,
            backoff: Duration::ZERO,
        }
    }

    /// Delay before retry number `n` (1-based): `backoff * 2^(n-1)`.
    pub fn delay(&self, n: u32) -> Duration {
        self.backoff.saturating_mul(1u32 << (n.saturating_sub(1)).min(16))
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ToolParam>,
    pub result: SemanticType,
    pub effect: Effect,
    /// Wall-clock budget; `None` for pure tools.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_millis")]
    pub timeout: Option<Duration>,
    pub retry: RetryPolicy,
    /// Implemented as a model completion (prompt-template tool).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub delegates_to_model: bool,
}

mod opt_millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&(d.as_millis() as u64)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Option::<u64>::deserialize(d).map(|o| o.map(Duration::from_millis))
    }
}

impl ToolSpec {
    pub fn pure(name: &str, description: &str, params: Vec<ToolParam>, result: SemanticType) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            params,
            result,
            effect: Effect::Pure,
            timeout: None,
            retry: RetryPolicy::none(),
            delegates_to_model: false,
        }
    }

    pub fn network(name: &str, description: &str, params: Vec<ToolParam>, result: SemanticType) -> Self {
        Self {
            effect: Effect::Network,
            timeout: Some(DEFAULT_TOOL_TIMEOUT),
            retry: RetryPolicy::default(),
            ..Self::pure(name, description, params, result)
        }
    }

    pub fn filesystem(name: &str, description: &str, params: Vec<ToolParam>, result: SemanticType) -> Self {
        Self {
            effect: Effect::Filesystem,
            timeout: Some(DEFAULT_TOOL_TIMEOUT),
            ..Self::pure(name, description, params, result)
        }
    }

    /// JSON-schema object for the argument document.
    pub fn argument_schema(&self) -> Value {
        let properties: Map<String, Value> = self
            .params
            .iter()
            .map(|p| {
                let mut schema = p.ty.json_schema();
                if !p.description.is_empty() {
                    schema["description"] = Value::String(p.description.clone());
                }
                (p.name.clone(), schema)
            })
            .collect();
        let required: Vec<&str> = self
            .params
            .iter()
            .filter(|p| p.required)
            .map(|p| p.name.as_str())
            .collect();
        json!({
            "type": "object",
            "properties": properties,
            "required": required,
            "additionalProperties": false,
        })
    }

    /// Checks an argument document against the declared params.
    pub fn validate(&self, args: &Value) -> Result<Map<String, Value>, String> {
        let obj = args.as_object().ok_or("arguments must be an object")?;
        for key in obj.keys() {
            if !self.params.iter().any(|p| &p.name == key) {
                return Err(format!("unknown argument `{key}`"));
            }
        }
        for p in &self.params {
            match obj.get(&p.name) {
                None | Some(Value::Null) if p.required => {
                    return Err(format!("missing required argument `{}`", p.name))
                }
                Some(v) if !v.is_null() && !p.ty.accepts(v) => {
                    return Err(format!("argument `{}` is not a valid {:?}", p.name, p.ty))
                }
                _ => {}
            }
        }
        Ok(obj.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    Unknown(String),
    #[error("tool `{0}` is already registered")]
    Duplicate(String),
    #[error("invalid arguments for `{tool}`: {message}")]
    InvalidArguments { tool: String, message: String },
    #[error("`{tool}` failed: {message}")]
    Failed {
        tool: String,
        message: String,
        retryable: bool,
    },
    #[error("`{tool}` timed out")]
    Timeout { tool: String },
    #[error("`{tool}` backend call failed: {error}")]
    Backend { tool: String, error: BackendError },
}

impl ToolError {
    pub fn failed(tool: &str, message: impl Into<String>) -> Self {
        ToolError::Failed {
            tool: tool.into(),
            message: message.into(),
            retryable: false,
        }
    }

    pub fn transient(tool: &str, message: impl Into<String>) -> Self {
        ToolError::Failed {
            tool: tool.into(),
            message: message.into(),
            retryable: true,
        }
    }

    fn retryable(&self) -> bool {
        matches!(
            self,
            ToolError::Failed { retryable: true, .. } | ToolError::Timeout { .. }
        )
    }
}

/// Per-invocation environment handed to tool implementations.
#[derive(Clone, Default)]
pub struct ToolContext<'a> {
    /// Agent on whose behalf the tool runs.
    pub caller: String,
    pub seed: u64,
    /// Model access for prompt-template tools.
    pub model: Option<&'a dyn ModelAccess>,
    /// Serve subscription/extraction stubs from bundled fixtures.
    pub fixtures: bool,
    /// Directory relative paths of filesystem tools resolve against.
    pub work_dir: Option<PathBuf>,
}

impl std::fmt::Debug for ToolContext<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolContext")
            .field("caller", &self.caller)
            .field("seed", &self.seed)
            .field("fixtures", &self.fixtures)
            .field("work_dir", &self.work_dir)
            .finish_non_exhaustive()
    }
}

impl ToolContext<'_> {
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = PathBuf::from(path);
        match &self.work_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p,
        }
    }
}

pub trait Tool: Send + Sync {
    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<Value, ToolError>;
}

impl<F> Tool for F
where
    F: Fn(&Map<String, Value>, &ToolContext<'_>) -> Result<Value, ToolError> + Send + Sync,
{
    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<Value, ToolError> {
        self(args, ctx)
    }
}

#[derive(Clone)]
struct Entry {
    spec: ToolSpec,
    imp: Arc<dyn Tool>,
}

/// Name → (spec, implementation). Read-mostly; safe to share across runs.
#[derive(Default)]
pub struct ToolRegistry {
    tools: RwLock<BTreeMap<String, Entry>>,
    path_locks: Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry").field("tools", &self.names()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, spec: ToolSpec, imp: impl Tool + 'static) -> Result<(), ToolError> {
        self.register_arc(spec, Arc::new(imp))
    }

    pub fn register_arc(&self, spec: ToolSpec, imp: Arc<dyn Tool>) -> Result<(), ToolError> {
        let mut tools = self.tools.write().expect("registry lock");
        if tools.contains_key(&spec.name) {
            return Err(ToolError::Duplicate(spec.name));
        }
        tools.insert(spec.name.clone(), Entry { spec, imp });
        Ok(())
    }

    pub fn spec(&self, name: &str) -> Option<ToolSpec> {
        self.tools
            .read()
            .expect("registry lock")
            .get(name)
            .map(|e| e.spec.clone())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.read().expect("registry lock").contains_key(name)
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.tools.read().expect("registry lock").keys().cloned().collect()
    }

    pub fn specs(&self) -> Vec<ToolSpec> {
        self.tools
            .read()
            .expect("registry lock")
            .values()
            .map(|e| e.spec.clone())
            .collect()
    }

    /// Digest over every registered spec, in name order.
    pub fn digest(&self) -> String {
        digest_of(&self.specs())
    }

    /// Validates `args` and runs the tool. Network tools retry transient
    /// failures per their retry policy; filesystem tools are serialized per
    /// `path` argument. Implementations never see invalid arguments.
    pub fn invoke(&self, name: &str, args: &Value, ctx: &ToolContext<'_>) -> Result<Value, ToolError> {
        let entry = self
            .tools
            .read()
            .expect("registry lock")
            .get(name)
            .cloned()
            .ok_or_else(|| ToolError::Unknown(name.to_string()))?;
        let args = entry
            .spec
            .validate(args)
            .map_err(|message| ToolError::InvalidArguments {
                tool: name.to_string(),
                message,
            })?;

        let lock = match (entry.spec.effect, args.get("path").and_then(Value::as_str)) {
            (Effect::Filesystem, Some(p)) => Some(self.path_lock(ctx.resolve(p))),
            _ => None,
        };
        let _guard = lock.as_ref().map(|l| l.lock().expect("path lock"));

        let mut attempt = 0;
        loop {
            match entry.imp.call(&args, ctx) {
                Err(e) if entry.spec.effect == Effect::Network && e.retryable() && attempt < entry.spec.retry.max => {
                    attempt += 1;
                    tracing::debug!(tool = name, attempt, "retrying after {e}");
                    std::thread::sleep(entry.spec.retry.delay(attempt));
                }
                other => return other,
            }
        }
    }

    fn path_lock(&self, path: PathBuf) -> Arc<Mutex<()>> {
        let mut locks = self.path_locks.lock().expect("path locks");
        Arc::clone(locks.entry(path).or_default())
    }
}

/// Typed argument accessors used by the concrete tools.
pub(crate) mod args {
    use serde::de::DeserializeOwned;
    use serde_json::{Map, Value};

    use super::ToolError;

    pub fn text<'a>(tool: &str, args: &'a Map<String, Value>, key: &str) -> Result<&'a str, ToolError> {
        args.get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| ToolError::failed(tool, format!("`{key}` is required")))
    }

    pub fn opt_f64(args: &Map<String, Value>, key: &str) -> Option<f64> {
        args.get(key).and_then(Value::as_f64)
    }

    pub fn opt_u64(args: &Map<String, Value>, key: &str) -> Option<u64> {
        args.get(key).and_then(Value::as_u64)
    }

    pub fn decode<T: DeserializeOwned>(tool: &str, args: &Map<String, Value>, key: &str) -> Result<T, ToolError> {
        let v = args.get(key).cloned().unwrap_or(Value::Null);
        serde_json::from_value(v).map_err(|e| ToolError::InvalidArguments {
            tool: tool.into(),
            message: format!("`{key}`: {e}"),
        })
    }

    pub fn series(tool: &str, args: &Map<String, Value>, key: &str) -> Result<Vec<Option<f64>>, ToolError> {
        decode(tool, args, key)
    }
}
