//! `agentloom` command line: catalog pipelines (snake_case flag aliases
//! accepted), generic spec runs, replay/verify and the HTTP API server.
//!
//! Exit codes: 0 success, 1 run failed or aborted, 2 usage error,
//! 3 verification failure.

pub mod render;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use agentloom_core::catalog;
use agentloom_core::checkpoint::api::{self, ApiState, LaunchRequest, Launcher, RunEntry, RunRegistry};
use agentloom_core::checkpoint::{
    AutoApprove, CheckpointStore, ConsoleSource, Decision, DecisionSource, ScriptedDecisions, StoreWait,
};
use agentloom_core::ids::IdMode;
use agentloom_core::orchestrator::{RunOptions, Services};
use agentloom_core::provenance::{replay, verify_run_dir, ReplayError};
use agentloom_core::run::RunStatus;
use agentloom_core::runtime::{Backend, HttpBackend, ScriptedBackend};
use agentloom_core::session;
use agentloom_core::spec::{load_pipeline_spec, validate_pipeline_spec, ParamType, ParamValue, Params, PipelineSpec};
use agentloom_core::toolkit::{stock_registry, ToolRegistry};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::render::{summary, Renderer};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUN_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "agentloom", version, about = "Agentic research-pipeline orchestration")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// `live`, `scripted` (the pipeline's bundled script) or `scripted:<path>`.
    #[arg(long, global = true, default_value = "live")]
    pub backend: String,
    /// Approve every checkpoint without asking.
    #[arg(long, global = true)]
    pub auto_approve: bool,
    /// JSON array of decision documents answered in order.
    #[arg(long, global = true, value_name = "FILE", conflicts_with = "auto_approve")]
    pub decisions: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Root under which each run gets its own directory.
    #[arg(long, global = true, default_value = "runs")]
    pub log_dir: PathBuf,
    /// Serve subscription and extraction tools from bundled fixtures
    /// (default for scripted backends).
    #[arg(long, global = true, overrides_with = "no_fixtures")]
    pub fixtures: bool,
    #[arg(long, global = true, overrides_with = "fixtures")]
    pub no_fixtures: bool,
    /// Summary only.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Mirror the provenance stream to stdout as JSON lines; progress and the
    /// summary go to stderr.
    #[arg(long, global = true)]
    pub json_events: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate research questions from a topic or a seed idea.
    Ideation {
        #[arg(long)]
        idea: Option<String>,
        #[arg(long)]
        topic: Option<String>,
    },
    /// Search, analyse and synthesize the literature on a topic.
    Literature {
        #[arg(long)]
        topic: String,
        #[arg(long = "max-results", alias = "max_results")]
        max_results: Option<i64>,
    },
    /// Build and calibrate an economic model.
    Model {
        #[arg(long = "model-type", alias = "model_type")]
        model_type: Option<String>,
        #[arg(long)]
        focus: String,
    },
    /// Collect, clean and document a dataset.
    Data {
        #[arg(long)]
        dataset: String,
        /// Comma-separated indicator names.
        #[arg(long)]
        indicators: String,
        #[arg(long)]
        frequency: Option<String>,
    },
    /// Run a catalog pipeline by name or a spec document by path.
    Run {
        pipeline: String,
        /// `name=value`, parsed as the declared parameter type.
        #[arg(long = "param", short = 'p', value_name = "NAME=VALUE")]
        params: Vec<String>,
    },
    /// Re-execute a recorded run offline and compare transcript digests.
    Replay {
        #[arg(long)]
        run: PathBuf,
        /// Record the replay under this root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a run directory's log and manifest digests.
    Verify {
        #[arg(long)]
        run: PathBuf,
    },
    /// Serve the HTTP API; runs started through it stay resident.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// List the pipeline catalog.
    List,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Verify(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Verify(_) => EXIT_VERIFY,
            CliError::Failed(_) => EXIT_RUN_FAILED,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

pub fn execute(cli: &Cli) -> Result<u8, CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Ideation { idea, topic } => {
            let mut p = Params::new();
            insert_text(&mut p, "idea", idea);
            insert_text(&mut p, "topic", topic);
            run_catalog(g, "ideation", p)
        }
        Command::Literature { topic, max_results } => {
            let mut p = Params::new();
            p.insert("topic".into(), ParamValue::Text(topic.clone()));
            if let Some(n) = max_results {
                p.insert("max_results".into(), ParamValue::Integer(*n));
            }
            run_catalog(g, "literature", p)
        }
        Command::Model { model_type, focus } => {
            let mut p = Params::new();
            insert_text(&mut p, "model_type", model_type);
            p.insert("focus".into(), ParamValue::Text(focus.clone()));
            run_catalog(g, "model", p)
        }
        Command::Data {
            dataset,
            indicators,
            frequency,
        } => {
            let mut p = Params::new();
            p.insert("dataset".into(), ParamValue::Text(dataset.clone()));
            p.insert(
                "indicators".into(),
                ParamValue::parse_as(ParamType::List, indicators).map_err(usage)?,
            );
            insert_text(&mut p, "frequency", frequency);
            run_catalog(g, "data", p)
        }
        Command::Run { pipeline, params } => run_generic(g, pipeline, params),
        Command::Replay { run, out } => replay_cmd(g, run, out.as_deref()),
        Command::Verify { run } => verify_cmd(run),
        Command::Serve { addr } => serve_cmd(g, addr),
        Command::List => {
            list_cmd();
            Ok(EXIT_OK)
        }
    }
}

fn insert_text(p: &mut Params, name: &str, value: &Option<String>) {
    if let Some(v) = value {
        p.insert(name.into(), ParamValue::Text(v.clone()));
    }
}

/// Backend selection parsed from `--backend`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Live,
    /// The catalog pipeline's bundled script.
    Bundled,
    Script(PathBuf),
}

impl std::str::FromStr for BackendChoice {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "live" => Ok(BackendChoice::Live),
            "scripted" => Ok(BackendChoice::Bundled),
            _ => match s.strip_prefix("scripted:") {
                Some(p) if !p.is_empty() => Ok(BackendChoice::Script(PathBuf::from(p))),
                _ => Err(usage(format!(
                    "--backend must be `live`, `scripted` or `scripted:<path>`, got `{s}`"
                ))),
            },
        }
    }
}

struct BackendSetup {
    backend: Arc<dyn Backend>,
    mode: IdMode,
    script_document: Option<String>,
}

/// `catalog_name` selects the bundled script for plain `scripted`.
fn backend_for(choice: &BackendChoice, catalog_name: Option<&str>) -> Result<BackendSetup, CliError> {
    let scripted = |doc: String, backend: ScriptedBackend| BackendSetup {
        backend: Arc::new(backend),
        mode: IdMode::Scripted,
        script_document: Some(doc),
    };
    match choice {
        BackendChoice::Live => {
            let b = HttpBackend::from_env().map_err(usage)?;
            Ok(BackendSetup {
                backend: Arc::new(b),
                mode: IdMode::Live,
                script_document: None,
            })
        }
        BackendChoice::Bundled => {
            let name = catalog_name
                .ok_or_else(|| usage("plain `scripted` needs a catalog pipeline; use `scripted:<path>`"))?;
            let script = catalog::script(name)
                .ok_or_else(|| usage(format!("`{name}` has no bundled script; use `scripted:<path>`")))?
                .map_err(usage)?;
            let doc = script.to_document();
            Ok(scripted(doc, ScriptedBackend::new(script)))
        }
        BackendChoice::Script(path) => {
            let doc = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let backend =
                ScriptedBackend::from_document(&doc).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            Ok(scripted(doc, backend))
        }
    }
}

fn decisions_for(g: &GlobalOpts) -> Result<Arc<dyn DecisionSource>, CliError> {
    if g.auto_approve {
        return Ok(Arc::new(AutoApprove));
    }
    match &g.decisions {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let bad = |e: String| usage(format!("{}: {e}", path.display()));
            let docs: Vec<serde_json::Value> = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            let list = docs
                .into_iter()
                .map(Decision::from_value)
                .collect::<Result<Vec<_>, _>>()
                .map_err(bad)?;
            Ok(Arc::new(ScriptedDecisions::new(list)))
        }
        None => Ok(ConsoleSource::stdio()),
    }
}

fn fixtures_for(g: &GlobalOpts, choice: &BackendChoice) -> bool {
    if g.fixtures {
        true
    } else if g.no_fixtures {
        false
    } else {
        *choice != BackendChoice::Live
    }
}

fn check_spec(spec: &PipelineSpec, tools: &ToolRegistry) -> Result<(), CliError> {
    let report = validate_pipeline_spec(spec, &tools.names());
    if report.is_ok() {
        return Ok(());
    }
    let lines: Vec<String> = report.violations.iter().map(|v| format!("  {v}")).collect();
    Err(usage(format!("spec `{}` is invalid:\n{}", spec.name, lines.join("\n"))))
}

fn run_catalog(g: &GlobalOpts, name: &str, params: Params) -> Result<u8, CliError> {
    let spec = catalog::instantiate(name, &params).map_err(usage)?;
    execute_spec(g, spec, params, Some(name))
}

fn run_generic(g: &GlobalOpts, pipeline: &str, raw: &[String]) -> Result<u8, CliError> {
    let (spec, catalog_name) = match catalog::entry(pipeline) {
        Some(entry) => (entry.spec.clone(), Some(pipeline)),
        None => {
            let doc = fs::read_to_string(pipeline).map_err(|e| {
                usage(format!(
                    "`{pipeline}` is neither a catalog pipeline nor a readable spec: {e}"
                ))
            })?;
            (load_pipeline_spec(&doc).map_err(usage)?, None)
        }
    };
    let mut params = Params::new();
    for kv in raw {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--param expects NAME=VALUE, got `{kv}`")))?;
        let decl = spec
            .params
            .get(k)
            .ok_or_else(|| usage(format!("`{}` declares no parameter `{k}`", spec.name)))?;
        params.insert(k.to_string(), ParamValue::parse_as(decl.ty, v).map_err(usage)?);
    }
    let spec = match catalog_name {
        Some(name) => catalog::instantiate(name, &params).map_err(usage)?,
        None => spec,
    };
    execute_spec(g, spec, params, catalog_name)
}

/// Prints progress to stdout, or mirrors raw events there with progress on
/// stderr when `--json-events` is set.
fn progress_sink(g: &GlobalOpts) -> impl Fn(&str) + Send + Sync + 'static {
    let to_stderr = g.json_events;
    move |line: &str| {
        if to_stderr {
            eprintln!("{line}");
        } else {
            println!("{line}");
        }
    }
}

fn execute_spec(
    g: &GlobalOpts,
    spec: PipelineSpec,
    params: Params,
    catalog_name: Option<&str>,
) -> Result<u8, CliError> {
    let choice: BackendChoice = g.backend.parse()?;
    let tools = Arc::new(stock_registry());
    check_spec(&spec, &tools)?;
    let setup = backend_for(&choice, catalog_name)?;
    let services = Services {
        backend: setup.backend,
        tools,
        decisions: decisions_for(g)?,
        store: Arc::new(CheckpointStore::new()),
    };
    let options = RunOptions {
        fixtures: fixtures_for(g, &choice),
        ..Default::default()
    };
    let pipeline = spec.name.clone();
    let prepared = session::prepare(
        Arc::new(spec),
        &params,
        g.seed,
        setup.mode,
        services,
        options,
        Some(&g.log_dir),
        setup.script_document.as_deref(),
    )
    .map_err(|e| match e {
        session::SessionError::Run(e) => usage(e),
        other => CliError::Failed(other.to_string()),
    })?;

    let say = progress_sink(g);
    if !g.quiet {
        say(&format!(
            "[INFO] agentloom initializing {pipeline} workflow (run {})",
            prepared.run_id()
        ));
        say("[INFO] Initializing agents... Done.");
        let renderer = Mutex::new(Renderer::new());
        let say = progress_sink(g);
        prepared.log.subscribe(move |event| {
            for line in renderer.lock().expect("renderer lock").render(event) {
                say(&line);
            }
        });
    }
    if g.json_events {
        prepared.log.subscribe(|event| {
            let mut out = std::io::stdout().lock();
            let _ = serde_json::to_writer(&mut out, event);
            let _ = writeln!(out);
        });
    }

    let finished = prepared.execute().map_err(|e| CliError::Failed(e.to_string()))?;
    let block = summary(&pipeline, &finished.result, finished.dir.as_deref());
    if g.json_events {
        eprint!("{block}");
    } else {
        print!("{block}");
    }
    Ok(match finished.result.status {
        RunStatus::Completed => EXIT_OK,
        _ => EXIT_RUN_FAILED,
    })
}

fn replay_cmd(g: &GlobalOpts, dir: &Path, out: Option<&Path>) -> Result<u8, CliError> {
    let outcome = match replay(dir, Arc::new(stock_registry()), Arc::new(CheckpointStore::new()), out) {
        Ok(o) => o,
        Err(ReplayError::Tampered(report)) => {
            return Err(CliError::Verify(format!(
                "{} failed verification:\n{report}",
                dir.display()
            )))
        }
        Err(e @ (ReplayError::Manifest(_) | ReplayError::Io(_) | ReplayError::BadManifest(_))) => {
            return Err(CliError::Verify(e.to_string()))
        }
        Err(e) => return Err(CliError::Failed(e.to_string())),
    };
    if !g.quiet {
        print!(
            "{}",
            summary(&outcome.manifest.pipeline, &outcome.result, outcome.dir.as_deref())
        );
    }
    if outcome.matches() {
        println!("[INFO] Replay matches: transcript digest {}", outcome.expected_digest);
        Ok(EXIT_OK)
    } else {
        Err(CliError::Verify(format!(
            "replay diverged: transcript digest {} != recorded {}",
            outcome.result.transcript_digest, outcome.expected_digest
        )))
    }
}

fn verify_cmd(dir: &Path) -> Result<u8, CliError> {
    let report = verify_run_dir(dir);
    if report.is_ok() {
        println!("[INFO] {}: ok", dir.display());
        Ok(EXIT_OK)
    } else {
        Err(CliError::Verify(format!(
            "{}: {} violation(s)\n{report}",
            dir.display(),
            report.violations.len()
        )))
    }
}

fn list_cmd() {
    for entry in catalog::entries() {
        let params: Vec<String> = entry
            .params
            .iter()
            .map(|(n, p)| {
                let flag = format!("--{}", n.replace('_', "-"));
                if p.required {
                    format!("{flag} <{}>", p.ty)
                } else {
                    format!("[{flag} <{}>]", p.ty)
                }
            })
            .collect();
        let kind = if entry.concrete { "" } else { " (template tools only)" };
        println!(
            "{:<15} {} checkpoint(s){kind}\n                {}",
            entry.name,
            entry.checkpoints,
            params.join(" ")
        );
    }
}

/// Coerces text values from JSON launch requests into the declared types.
fn coerce_params(spec: &PipelineSpec, params: &Params) -> Result<Params, String> {
    params
        .iter()
        .map(|(k, v)| {
            let value = match (spec.params.get(k), v) {
                (Some(decl), ParamValue::Text(s)) if decl.ty != ParamType::Text => ParamValue::parse_as(decl.ty, s)?,
                _ => v.clone(),
            };
            Ok((k.clone(), value))
        })
        .collect()
}

fn serve_cmd(g: &GlobalOpts, addr: &str) -> Result<u8, CliError> {
    let choice: BackendChoice = g.backend.parse()?;
    let registry = Arc::new(RunRegistry::new(Arc::new(CheckpointStore::new())));
    let launcher = {
        let g = g.clone();
        let registry = registry.clone();
        let tools = Arc::new(stock_registry());
        let launcher: Launcher = Arc::new(move |req: LaunchRequest| {
            let entry =
                catalog::entry(&req.pipeline).ok_or_else(|| format!("no catalog pipeline `{}`", req.pipeline))?;
            let params = coerce_params(&entry.spec, &req.params)?;
            let spec = catalog::instantiate(&req.pipeline, &params).map_err(|e| e.to_string())?;
            let setup = backend_for(&choice, Some(&req.pipeline)).map_err(|e| e.to_string())?;
            let decisions: Arc<dyn DecisionSource> = if g.auto_approve {
                Arc::new(AutoApprove)
            } else {
                Arc::new(StoreWait)
            };
            let services = Services {
                backend: setup.backend,
                tools: tools.clone(),
                decisions,
                store: registry.store().clone(),
            };
            let options = RunOptions {
                fixtures: fixtures_for(&g, &choice),
                ..Default::default()
            };
            let prepared = session::prepare(
                Arc::new(spec),
                &params,
                req.seed.unwrap_or(g.seed),
                setup.mode,
                services,
                options,
                Some(&g.log_dir),
                setup.script_document.as_deref(),
            )
            .map_err(|e| e.to_string())?;
            let run_id = prepared.run_id().to_string();
            registry.register(RunEntry {
                run_id: run_id.clone(),
                pipeline: req.pipeline.clone(),
                started_at: chrono::Utc::now(),
                log: prepared.log.clone(),
            });
            std::thread::spawn(move || {
                if let Err(e) = prepared.execute() {
                    eprintln!("error: run failed to execute: {e}");
                }
            });
            Ok(run_id)
        });
        launcher
    };
    let state = ApiState::new(registry).with_env_token().with_launcher(launcher);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Failed(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| usage(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Failed(e.to_string()))?;
        println!("[INFO] Serving the agentloom API on http://{local}");
        let _ = std::io::stdout().flush();
        api::serve(listener, state)
            .await
            .map_err(|e| CliError::Failed(e.to_string()))
    })?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("agentloom").chain(args.iter().copied()))
    }

    #[test]
    fn snake_case_spelling_is_an_alias() {
        let cli = parse(&["model", "--model_type", "DSGE", "--focus", "fiscal policy impacts"]).unwrap();
        match cli.command {
            Command::Model { model_type, focus } => {
                assert_eq!(model_type.as_deref(), Some("DSGE"));
                assert_eq!(focus, "fiscal policy impacts");
            }
            other => panic!("{other:?}"),
        }
        assert!(parse(&["model", "--model-type", "RBC", "--focus", "x"]).is_ok());
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        let err = parse(&["ideation", "--colour", "blue"]).unwrap_err();
        assert!(err.use_stderr());
        assert_eq!(err.exit_code(), EXIT_USAGE as i32);
    }

    #[test]
    fn global_flags_follow_the_subcommand() {
        let cli = parse(&[
            "ideation",
            "--idea",
            "x",
            "--backend",
            "scripted",
            "--auto-approve",
            "--seed",
            "42",
        ])
        .unwrap();
        assert!(cli.global.auto_approve);
        assert_eq!(cli.global.seed, 42);
    }

    #[test]
    fn backend_choices() {
        assert_eq!("live".parse::<BackendChoice>().unwrap(), BackendChoice::Live);
        assert_eq!("scripted".parse::<BackendChoice>().unwrap(), BackendChoice::Bundled);
        assert_eq!(
            "scripted:fx.script".parse::<BackendChoice>().unwrap(),
            BackendChoice::Script("fx.script".into())
        );
        assert!("scripted:".parse::<BackendChoice>().is_err());
        assert!("openai".parse::<BackendChoice>().is_err());
    }

    #[test]
    fn launch_params_are_coerced() {
        let spec = catalog::entry("data").unwrap().spec.clone();
        let mut p = Params::new();
        p.insert("indicators".into(), ParamValue::Text("gdp, cpi".into()));
        p.insert("dataset".into(), ParamValue::Text("em".into()));
        let c = coerce_params(&spec, &p).unwrap();
        assert_eq!(c["indicators"], ParamValue::List(vec!["gdp".into(), "cpi".into()]));
        assert_eq!(c["dataset"], ParamValue::Text("em".into()));
    }
}
