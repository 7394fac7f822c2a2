//! `{name}` placeholder templates shared by stage tasks and prompt tools.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex"))
}

/// Placeholder names in first-appearance order, without duplicates.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for cap in placeholder_re().captures_iter(template) {
        let name = cap[1].to_string();
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

/// Substitutes every placeholder. Fails with the first unresolved name.
pub fn render(template: &str, values: &BTreeMap<String, String>) -> Result<String, String> {
    if let Some(missing) = placeholders(template).into_iter().find(|p| !values.contains_key(p)) {
        return Err(missing);
    }
    Ok(placeholder_re()
        .replace_all(template, |caps: &regex::Captures<'_>| values[&caps[1]].clone())
        .into_owned())
}

/// Substitutes known placeholders and leaves the others verbatim.
pub fn render_partial(template: &str, values: &BTreeMap<String, String>) -> String {
    placeholder_re()
        .replace_all(template, |caps: &regex::Captures<'_>| {
            values.get(&caps[1]).cloned().unwrap_or_else(|| caps[0].to_string())
        })
        .into_owned()
}
