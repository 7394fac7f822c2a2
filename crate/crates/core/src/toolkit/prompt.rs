//! Prompt-template tools: one templated model completion per invocation.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{Map, Value};

use super::registry::{SemanticType, Tool, ToolContext, ToolError, ToolParam, ToolRegistry, ToolSpec};
use crate::template;

pub const PROMPT_TOOL_SYSTEM: &str = "You are a careful research assistant. Answer the request directly and concisely.";

struct PromptTool {
    name: String,
    template: String,
}

impl Tool for PromptTool {
    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<Value, ToolError> {
        let values: BTreeMap<String, String> = args
            .iter()
            .map(|(k, v)| {
                let text = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), text)
            })
            .collect();
        let prompt = template::render(&self.template, &values)
            .map_err(|missing| ToolError::failed(&self.name, format!("unresolved placeholder `{missing}`")))?;
        let model = ctx
            .model
            .ok_or_else(|| ToolError::failed(&self.name, "no model backend available"))?;
        let text = model
            .complete_for(&self.name, PROMPT_TOOL_SYSTEM, &prompt)
            .map_err(|error| ToolError::Backend {
                tool: self.name.clone(),
                error,
            })?;
        Ok(Value::String(text))
    }
}

/// Builds a tool whose parameters are the template's placeholders (all
/// required text) and whose result is the completion text.
pub fn make_prompt_tool(name: &str, description: &str, template: &str) -> (ToolSpec, Arc<dyn Tool>) {
    let params = template::placeholders(template)
        .iter()
        .map(|p| ToolParam::required(p, SemanticType::Text, ""))
        .collect();
    let mut spec = ToolSpec::network(name, description, params, SemanticType::Text);
    // Retrying is the model call's business; the tool itself never retries.
    spec.retry = super::registry::RetryPolicy::none();
    spec.delegates_to_model = true;
    (
        spec,
        Arc::new(PromptTool {
            name: name.to_string(),
            template: template.to_string(),
        }),
    )
}

/// `(name, description, template)` for every shipped prompt tool.
pub const PROMPT_TOOLS: &[(&str, &str, &str)] = &[
    // ideation
    (
        "ideation_tool",
        "Generate candidate research questions.",
        "Propose distinct, testable research questions on: {topic}\nGround them in these signals:\n{signals}",
    ),
    (
        "idea_enrichment_tool",
        "Expand a seed idea.",
        "Expand this seed idea into related angles, mechanisms and data sources: {idea}",
    ),
    ("refinement_tool", "Sharpen research questions.", "Refine: {ideas}"),
    (
        "contextualization_tool",
        "Place questions in context.",
        "Place these research questions in the current literature and policy context: {ideas}",
    ),
    (
        "finalization_tool",
        "Select final questions.",
        "Select and polish the final research questions, with a one-line rationale each: {ideas}",
    ),
    // literature
    (
        "summarize_paper_tool",
        "Summarize a paper.",
        "Summarize the contribution, method and findings of: {paper}",
    ),
    (
        "decompose_paper_tool",
        "Break a paper into components.",
        "Decompose into question, identification, data, results and caveats: {paper}",
    ),
    (
        "find_research_gaps_tool",
        "Identify research gaps.",
        "Identify open research gaps across these summaries: {summaries}",
    ),
    (
        "track_research_trends_tool",
        "Describe research trends.",
        "Describe how research on {topic} has evolved and where it is heading.",
    ),
    (
        "synthesize_report_tool",
        "Write a literature report.",
        "Write a structured literature review report from: {material}",
    ),
    // model
    (
        "define_theoretical_framework_tool",
        "Propose a theoretical framework.",
        "Define a theoretical framework for a {model_type} model focused on {focus}.",
    ),
    (
        "translate_to_mathematical_model_tool",
        "Formalize a framework.",
        "Translate this framework into equilibrium conditions and equations: {framework}",
    ),
    (
        "calibrate_narrative_tool",
        "Describe a calibration strategy.",
        "Propose calibration targets and parameter values for: {model}",
    ),
    // data
    (
        "documentation_tool",
        "Document a data pipeline.",
        "Write reproducibility documentation for this data pipeline: {pipeline}",
    ),
    // implementation
    (
        "write_code_tool",
        "Draft code from a specification.",
        "Write well-structured code implementing: {specification}",
    ),
    (
        "debug_code_tool",
        "Diagnose a failure.",
        "Diagnose and fix this failure: {error}",
    ),
    (
        "review_tests_tool",
        "Propose tests.",
        "Propose unit and integration tests for: {code}",
    ),
    (
        "optimize_code_tool",
        "Suggest optimizations.",
        "Suggest performance improvements for: {code}",
    ),
    (
        "batch_plan_tool",
        "Plan batch runs.",
        "Plan a batch of simulation runs over: {grid}",
    ),
    (
        "log_summary_tool",
        "Summarize logs.",
        "Summarize these execution logs: {log}",
    ),
    (
        "version_note_tool",
        "Write a change note.",
        "Write a version-control change note for: {change}",
    ),
    // estimation
    (
        "estimate_model_tool",
        "Describe an estimation.",
        "Describe an estimation strategy for {model} using {data}.",
    ),
    (
        "validate_estimates_tool",
        "Validate estimates.",
        "Assess the plausibility of these estimates: {estimates}",
    ),
    (
        "diagnostics_tool",
        "Run diagnostics.",
        "List diagnostic checks and interpret them for: {estimates}",
    ),
    (
        "hypothesis_test_tool",
        "Design hypothesis tests.",
        "Design hypothesis tests for: {hypothesis}",
    ),
    (
        "robustness_check_tool",
        "Plan robustness checks.",
        "Plan robustness checks for: {results}",
    ),
    // reporting
    (
        "interpret_results_tool",
        "Interpret results.",
        "Interpret these results for an economics audience: {results}",
    ),
    (
        "design_visuals_tool",
        "Design figures.",
        "Propose figures and tables for: {results}",
    ),
    (
        "draft_report_tool",
        "Draft a paper section.",
        "Draft the paper section on: {content}",
    ),
    (
        "journal_advice_tool",
        "Recommend journals.",
        "Recommend target journals for: {abstract}",
    ),
    (
        "proofread_tool",
        "Proofread text.",
        "Proofread and flag issues in: {text}",
    ),
    (
        "format_manuscript_tool",
        "Format a manuscript.",
        "Format for journal submission: {text}",
    ),
    (
        "respond_to_reviewers_tool",
        "Draft reviewer responses.",
        "Draft point-by-point responses to: {comments}",
    ),
];

pub fn register(reg: &ToolRegistry) -> Result<(), ToolError> {
    for (name, description, template) in PROMPT_TOOLS {
        let (spec, imp) = make_prompt_tool(name, description, template);
        reg.register_arc(spec, imp)?;
    }
    Ok(())
}
