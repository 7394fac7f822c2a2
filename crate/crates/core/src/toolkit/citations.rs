//! Author-year bibliography formatting.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::registry::{args, SemanticType, ToolContext, ToolError, ToolParam, ToolRegistry, ToolSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CitationEntry {
    pub key: String,
    pub authors: Vec<String>,
    pub year: i32,
    pub title: String,
    #[serde(default)]
    pub venue: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doi: Option<String>,
}

impl CitationEntry {
    /// Surname of the first author: text before a comma, else the last word.
    pub fn first_surname(&self) -> String {
        let Some(first) = self.authors.first() else {
            return String::new();
        };
        match first.split_once(',') {
            Some((surname, _)) => surname.trim().to_string(),
            None => first.split_whitespace().last().unwrap_or_default().to_string(),
        }
    }

    pub fn author_year_line(&self) -> String {
        let mut line = format!(
            "{} ({}). {}.",
            self.authors.join(", "),
            self.year,
            self.title.trim_end_matches('.')
        );
        if !self.venue.is_empty() {
            line.push(' ');
            line.push_str(self.venue.trim_end_matches('.'));
            line.push('.');
        }
        if let Some(doi) = &self.doi {
            line.push_str(" doi:");
            line.push_str(doi);
        }
        line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CitationError {
    #[error("duplicate citation key `{0}`")]
    DuplicateKey(String),
    #[error("entry `{key}` has implausible year {year}")]
    Year { key: String, year: i32 },
    #[error("unsupported style `{0}`")]
    Style(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupNote {
    pub removed: String,
    pub kept: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bibliography {
    pub lines: Vec<String>,
    pub duplicates: Vec<DedupNote>,
}

impl Bibliography {
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }
}

/// One line per entry sorted by (first-author surname, year); entries that
/// repeat an earlier (title, year) are dropped and reported.
pub fn format_citations(entries: &[CitationEntry]) -> Result<Bibliography, CitationError> {
    let mut keys = HashSet::new();
    for e in entries {
        if !keys.insert(e.key.as_str()) {
            return Err(CitationError::DuplicateKey(e.key.clone()));
        }
        if !(1500..=2100).contains(&e.year) {
            return Err(CitationError::Year {
                key: e.key.clone(),
                year: e.year,
            });
        }
    }
    let mut kept: Vec<&CitationEntry> = Vec::new();
    let mut duplicates = Vec::new();
    for e in entries {
        let norm = e.title.trim().to_lowercase();
        match kept
            .iter()
            .find(|k| k.year == e.year && k.title.trim().to_lowercase() == norm)
        {
            Some(k) => duplicates.push(DedupNote {
                removed: e.key.clone(),
                kept: k.key.clone(),
            }),
            None => kept.push(e),
        }
    }
    kept.sort_by(|a, b| {
        (a.first_surname().to_lowercase(), a.year, &a.title).cmp(&(b.first_surname().to_lowercase(), b.year, &b.title))
    });
    Ok(Bibliography {
        lines: kept.iter().map(|e| e.author_year_line()).collect(),
        duplicates,
    })
}

pub fn register(reg: &ToolRegistry) -> Result<(), ToolError> {
    reg.register(
        ToolSpec::pure(
            "format_citations",
            "Standardized author-year bibliography with duplicate removal.",
            vec![
                ToolParam::required("entries", SemanticType::Citations, "citation entries"),
                ToolParam::optional("style", SemanticType::Text, "only `author-year`"),
            ],
            SemanticType::Document,
        ),
        |a: &Map<String, Value>, _: &ToolContext<'_>| {
            const NAME: &str = "format_citations";
            if let Some(style) = a.get("style").and_then(Value::as_str) {
                if style != "author-year" {
                    return Err(ToolError::failed(NAME, CitationError::Style(style.into()).to_string()));
                }
            }
            let entries: Vec<CitationEntry> = args::decode(NAME, a, "entries")?;
            let bib = format_citations(&entries).map_err(|e| ToolError::failed(NAME, e.to_string()))?;
            Ok(json!({
                "bibliography": bib.text(),
                "count": bib.lines.len(),
                "duplicates": bib.duplicates,
            }))
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: &str, author: &str, year: i32, title: &str) -> CitationEntry {
        CitationEntry {
            key: key.into(),
            authors: vec![author.into()],
            year,
            title: title.into(),
            venue: "J".into(),
            doi: None,
        }
    }

    #[test]
    fn single_entry_format() {
        let bib = format_citations(&[entry("d", "Doe", 2020, "T")]).unwrap();
        assert_eq!(bib.lines, vec!["Doe (2020). T. J."]);
    }

    #[test]
    fn same_title_and_year_is_deduplicated() {
        let bib = format_citations(&[entry("a", "Doe", 2020, "T"), entry("b", "Roe", 2020, "T")]).unwrap();
        assert_eq!(bib.lines.len(), 1);
        assert_eq!(
            bib.duplicates,
            vec![DedupNote {
                removed: "b".into(),
                kept: "a".into()
            }]
        );
    }

    #[test]
    fn duplicate_keys_and_bad_years_fail() {
        assert!(matches!(
            format_citations(&[entry("a", "Doe", 2020, "T"), entry("a", "Roe", 2021, "U")]),
            Err(CitationError::DuplicateKey(_))
        ));
        assert!(format_citations(&[entry("a", "Doe", 1200, "T")]).is_err());
    }

    #[test]
    fn sorted_by_surname_then_year() {
        let bib = format_citations(&[
            entry("1", "Zed, A.", 2001, "A"),
            entry("2", "Jane Adams", 2010, "B"),
            entry("3", "Adams, J.", 2005, "C"),
        ])
        .unwrap();
        assert!(bib.lines[0].starts_with("Adams, J. (2005)"));
        assert!(bib.lines[1].starts_with("Jane Adams (2010)"));
    }
}
