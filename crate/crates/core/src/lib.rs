//! Orchestration engine for agentic research pipelines.
//!
//! A pipeline is a declarative [`spec::PipelineSpec`]: typed agents with
//! tools and model bindings, grouped into stages that run round-robin,
//! sequentially or as a parallel fan-out. The [`orchestrator`] drives a
//! [`run::RunState`] through the stages, pausing at human checkpoints,
//! routing failures through escalation policies and writing every state
//! change to a [`provenance`] log that can be verified and replayed.

pub mod catalog;
pub mod checkpoint;
pub mod ids;
pub mod message;
pub mod orchestrator;
pub mod provenance;
pub mod run;
pub mod runtime;
pub mod session;
pub mod spec;
pub mod template;
pub mod toolkit;
