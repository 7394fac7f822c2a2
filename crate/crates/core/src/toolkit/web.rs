//! Page fetching with HTML → markdown conversion, and a generic
//! web-extraction client for trending-news and grey-literature lookups.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::fixtures;
use super::registry::{args, SemanticType, ToolContext, ToolError, ToolParam, ToolRegistry, ToolSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchedDocument {
    pub url: String,
    pub title: String,
    pub markdown: String,
}

fn title_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)<title[^>]*>(.*?)</title>").expect("static regex"))
}

/// Converts an HTML document to markdown; `<head>`, scripts and styles are
/// dropped.
pub fn html_to_markdown(html: &str) -> Result<(String, String), String> {
    let title = title_re()
        .captures(html)
        .map(|c| c[1].split_whitespace().collect::<Vec<_>>().join(" "))
        .unwrap_or_default();
    let converter = htmd::HtmlToMarkdown::builder()
        .skip_tags(vec!["head", "script", "style", "noscript"])
        .build();
    let md = converter.convert(html).map_err(|e| format!("conversion failed: {e}"))?;
    Ok((title, md.trim().to_string()))
}

pub fn web_fetch(url: &str) -> Result<FetchedDocument, ToolError> {
    const NAME: &str = "web_fetch";
    let parsed = url::Url::parse(url).map_err(|e| ToolError::failed(NAME, format!("invalid url: {e}")))?;
    if !matches!(parsed.scheme(), "http" | "https") {
        return Err(ToolError::failed(
            NAME,
            format!("unsupported scheme `{}`", parsed.scheme()),
        ));
    }
    let html = super::http_get(NAME, url)?;
    let (title, markdown) = html_to_markdown(&html).map_err(|e| ToolError::failed(NAME, e))?;
    Ok(FetchedDocument {
        url: url.to_string(),
        title,
        markdown,
    })
}

/// Posts `{"mode", "query"}` to `AGENTLOOM_SCRAPER_URL` with bearer
/// `AGENTLOOM_SCRAPER_KEY` and returns the JSON answer.
pub fn web_extract(tool: &str, mode: &str, query: &str, ctx: &ToolContext<'_>) -> Result<Value, ToolError> {
    if ctx.fixtures {
        return fixtures::stub_result(tool).ok_or_else(|| ToolError::failed(tool, "no fixture bundled"));
    }
    let endpoint = std::env::var("AGENTLOOM_SCRAPER_URL").map_err(|_| {
        ToolError::failed(
            tool,
            "AGENTLOOM_SCRAPER_URL is not set (use --fixtures for offline runs)",
        )
    })?;
    let mut req = super::http_client()
        .post(&endpoint)
        .json(&json!({"mode": mode, "query": query}));
    if let Ok(key) = std::env::var("AGENTLOOM_SCRAPER_KEY") {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| super::transport_error(tool, &e))?;
    let status = resp.status();
    if !status.is_success() {
        return Err(super::status_error(tool, status.as_u16()));
    }
    resp.json()
        .map_err(|e| ToolError::failed(tool, format!("bad extraction response: {e}")))
}

pub fn register(reg: &ToolRegistry) -> Result<(), ToolError> {
    reg.register(
        ToolSpec::network(
            "web_fetch",
            "Fetch an http(s) page and return its title and markdown body.",
            vec![ToolParam::required("url", SemanticType::Url, "page address")],
            SemanticType::Document,
        ),
        |a: &Map<String, Value>, _: &ToolContext<'_>| web_fetch(args::text("web_fetch", a, "url")?).map(|d| json!(d)),
    )?;
    for (name, mode, desc) in [
        (
            "trending_news_tool",
            "news",
            "Trending news and policy debates for a topic.",
        ),
        (
            "grey_literature_tool",
            "grey-literature",
            "Working papers and institutional reports for a topic.",
        ),
    ] {
        reg.register(
            ToolSpec::network(
                name,
                desc,
                vec![ToolParam::required("topic", SemanticType::Text, "topic to search")],
                SemanticType::DocumentList,
            ),
            move |a: &Map<String, Value>, ctx: &ToolContext<'_>| {
                web_extract(name, mode, args::text(name, a, "topic")?, ctx)
            },
        )?;
    }
    Ok(())
}
