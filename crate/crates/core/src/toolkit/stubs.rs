//! Subscription-source placeholders. They return bundled fixture data when
//! fixtures are enabled and refuse to run otherwise.

use serde_json::{Map, Value};

use super::fixtures;
use super::registry::{SemanticType, ToolContext, ToolError, ToolParam, ToolRegistry, ToolSpec};

struct Stub {
    name: &'static str,
    description: &'static str,
    params: &'static [(&'static str, SemanticType, bool)],
    result: SemanticType,
}

const STUBS: &[Stub] = &[
    Stub {
        name: "scholar_search_tool",
        description: "Google Scholar search (stub).",
        params: &[("query", SemanticType::Text, true)],
        result: SemanticType::DocumentList,
    },
    Stub {
        name: "academic_literature_tool",
        description: "Academic literature database search (stub).",
        params: &[("query", SemanticType::Text, true)],
        result: SemanticType::DocumentList,
    },
    Stub {
        name: "econlit_search_tool",
        description: "EconLit search (subscription stub).",
        params: &[("query", SemanticType::Text, true)],
        result: SemanticType::DocumentList,
    },
    Stub {
        name: "scopus_search_tool",
        description: "Scopus search (subscription stub).",
        params: &[("query", SemanticType::Text, true)],
        result: SemanticType::DocumentList,
    },
    Stub {
        name: "wos_search_tool",
        description: "Web of Science search (subscription stub).",
        params: &[("query", SemanticType::Text, true)],
        result: SemanticType::DocumentList,
    },
    Stub {
        name: "bloomberg_data_tool",
        description: "Bloomberg market series (subscription stub).",
        params: &[("ticker", SemanticType::Text, true)],
        result: SemanticType::Table,
    },
    Stub {
        name: "imf_ifs_data_tool",
        description: "IMF International Financial Statistics series (subscription stub).",
        params: &[
            ("indicator", SemanticType::Text, true),
            ("country", SemanticType::Text, false),
        ],
        result: SemanticType::Table,
    },
    Stub {
        name: "search_economic_indicators_tool",
        description: "Locate sources and coverage for economic indicators (stub).",
        params: &[("query", SemanticType::Text, true)],
        result: SemanticType::DocumentList,
    },
    Stub {
        name: "retrieve_data_tool",
        description: "Retrieve indicator series from their sources (stub).",
        params: &[
            ("dataset", SemanticType::Text, true),
            ("indicators", SemanticType::TextList, true),
        ],
        result: SemanticType::TableList,
    },
];

pub fn register(reg: &ToolRegistry) -> Result<(), ToolError> {
    for stub in STUBS {
        let params = stub
            .params
            .iter()
            .map(|(n, ty, req)| {
                if *req {
                    ToolParam::required(n, *ty, "")
                } else {
                    ToolParam::optional(n, *ty, "")
                }
            })
            .collect();
        let name = stub.name;
        reg.register(
            ToolSpec::network(name, stub.description, params, stub.result),
            move |_: &Map<String, Value>, ctx: &ToolContext<'_>| {
                if !ctx.fixtures {
                    return Err(ToolError::failed(
                        name,
                        "subscription source unavailable; run with --fixtures",
                    ));
                }
                fixtures::stub_result(name).ok_or_else(|| ToolError::failed(name, "no fixture bundled"))
            },
        )?;
    }
    Ok(())
}
