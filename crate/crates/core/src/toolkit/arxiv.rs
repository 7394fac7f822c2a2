//! arXiv query-feed client.

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::fixtures;
use super::registry::{args, SemanticType, ToolContext, ToolError, ToolParam, ToolRegistry, ToolSpec};

pub const DEFAULT_ARXIV_URL: &str = "http://export.arxiv.org/api/query";
const NAME: &str = "arxiv_search";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub id: String,
    pub title: String,
    pub authors: Vec<String>,
    #[serde(rename = "abstract")]
    pub summary: String,
    pub link: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub published: String,
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn local(name: &[u8]) -> &[u8] {
    name.rsplit(|b| *b == b':').next().unwrap_or(name)
}

fn attr(e: &BytesStart<'_>, key: &str) -> Option<String> {
    e.attributes()
        .flatten()
        .find(|a| a.key.as_ref() == key.as_bytes())
        .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
}

/// Parses an Atom feed into paper records.
pub fn parse_atom_feed(xml: &str) -> Result<Vec<PaperRecord>, String> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);
    let mut out = Vec::new();
    let mut cur: Option<PaperRecord> = None;
    let mut in_author = false;
    let mut text = String::new();
    loop {
        match reader
            .read_event()
            .map_err(|e| format!("feed parse error at {}: {e}", reader.buffer_position()))?
        {
            Event::Eof => break,
            Event::Start(e) => {
                text.clear();
                match local(e.name().as_ref()) {
                    b"entry" => cur = Some(PaperRecord::default()),
                    b"author" => in_author = true,
                    b"link" => link(&mut cur, &e),
                    _ => {}
                }
            }
            Event::Empty(e) if local(e.name().as_ref()) == b"link" => link(&mut cur, &e),
            Event::Text(t) => text.push_str(&t.unescape().map_err(|e| format!("feed parse error: {e}"))?),
            Event::CData(t) => text.push_str(&String::from_utf8_lossy(&t)),
            Event::End(e) => {
                let name = local(e.name().as_ref()).to_vec();
                if let Some(rec) = cur.as_mut() {
                    match name.as_slice() {
                        b"id" => rec.id = squash(&text),
                        b"title" => rec.title = squash(&text),
                        b"summary" => rec.summary = squash(&text),
                        b"published" => rec.published = squash(&text),
                        b"name" if in_author => rec.authors.push(squash(&text)),
                        b"author" => in_author = false,
                        b"entry" => {
                            let mut rec = cur.take().expect("inside entry");
                            if rec.link.is_empty() {
                                rec.link = rec.id.clone();
                            }
                            out.push(rec);
                        }
                        _ => {}
                    }
                }
                text.clear();
            }
            _ => {}
        }
    }
    if cur.is_some() {
        return Err("feed parse error: unterminated entry".into());
    }
    Ok(out)
}

fn link(cur: &mut Option<PaperRecord>, e: &BytesStart<'_>) {
    if let Some(rec) = cur.as_mut() {
        let rel = attr(e, "rel").unwrap_or_else(|| "alternate".into());
        if rel == "alternate" {
            if let Some(href) = attr(e, "href") {
                rec.link = href;
            }
        }
    }
}

/// Runs a query against the feed endpoint (or the bundled fixture feed).
pub fn arxiv_search(query: &str, max_results: usize, ctx: &ToolContext<'_>) -> Result<Vec<PaperRecord>, ToolError> {
    if query.trim().is_empty() {
        return Err(ToolError::failed(NAME, "empty query"));
    }
    if max_results == 0 {
        return Ok(Vec::new());
    }
    let body = if ctx.fixtures {
        fixtures::ARXIV_FEED.to_string()
    } else {
        let base = std::env::var("AGENTLOOM_ARXIV_URL").unwrap_or_else(|_| DEFAULT_ARXIV_URL.to_string());
        let mut url = url::Url::parse(&base).map_err(|e| ToolError::failed(NAME, e.to_string()))?;
        url.query_pairs_mut()
            .append_pair("search_query", &format!("all:{query}"))
            .append_pair("start", "0")
            .append_pair("max_results", &max_results.to_string());
        super::http_get(NAME, url.as_str())?
    };
    let mut records = parse_atom_feed(&body).map_err(|e| ToolError::failed(NAME, e))?;
    records.truncate(max_results);
    Ok(records)
}

pub fn register(reg: &ToolRegistry) -> Result<(), ToolError> {
    reg.register(
        ToolSpec::network(
            NAME,
            "Search arXiv; returns title, authors, abstract, id and link per paper.",
            vec![
                ToolParam::required("query", SemanticType::Text, "search terms"),
                ToolParam::required("max_results", SemanticType::Integer, "upper bound on records"),
            ],
            SemanticType::DocumentList,
        ),
        |a: &Map<String, Value>, ctx: &ToolContext<'_>| {
            let query = args::text(NAME, a, "query")?;
            let max = args::opt_u64(a, "max_results").unwrap_or(0) as usize;
            arxiv_search(query, max, ctx).map(|r| json!(r))
        },
    )
}
