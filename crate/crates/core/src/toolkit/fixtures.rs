//! Bundled fixture data for offline (`--fixtures`) runs and tests.

use std::sync::OnceLock;

use serde_json::Value;

use super::citations::CitationEntry;

pub const ARXIV_FEED: &str = include_str!("../../catalog/fixtures/arxiv_feed.xml");
const STUBS: &str = include_str!("../../catalog/fixtures/stubs.json");
const CITATIONS: &str = include_str!("../../catalog/fixtures/citations.json");

fn stubs() -> &'static serde_json::Map<String, Value> {
    static DATA: OnceLock<serde_json::Map<String, Value>> = OnceLock::new();
    DATA.get_or_init(|| serde_json::from_str(STUBS).expect("bundled stub fixtures parse"))
}

/// Canned result of a stub or extraction tool.
pub fn stub_result(tool: &str) -> Option<Value> {
    stubs().get(tool).cloned()
}

/// 89 distinct bibliography entries.
pub fn citations() -> Vec<CitationEntry> {
    serde_json::from_str(CITATIONS).expect("bundled citations parse")
}
