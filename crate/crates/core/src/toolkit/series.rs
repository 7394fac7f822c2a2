//! Time-indexed tables of numeric series.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frequency {
    Monthly,
    Quarterly,
    Annual,
}

impl Frequency {
    pub fn periods_per_year(self) -> u32 {
        match self {
            Frequency::Monthly => 12,
            Frequency::Quarterly => 4,
            Frequency::Annual => 1,
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frequency::Monthly => "monthly",
            Frequency::Quarterly => "quarterly",
            Frequency::Annual => "annual",
        })
    }
}

/// A point in time at some frequency: `sub` is 1-based (month or quarter),
/// always 1 for annual periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Period {
    pub freq: Frequency,
    pub year: i32,
    pub sub: u32,
}

impl Period {
    pub fn new(freq: Frequency, year: i32, sub: u32) -> Result<Self, SeriesError> {
        if sub == 0 || sub > freq.periods_per_year() {
            return Err(SeriesError::BadPeriod(format!("{year} sub-period {sub} at {freq}")));
        }
        Ok(Self { freq, year, sub })
    }

    /// Periods since year 0, used for alignment arithmetic.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * self.freq.periods_per_year() as i64 + (self.sub as i64 - 1)
    }

    pub fn from_ordinal(freq: Frequency, ordinal: i64) -> Self {
        let ppy = freq.periods_per_year() as i64;
        Self {
            freq,
            year: ordinal.div_euclid(ppy) as i32,
            sub: (ordinal.rem_euclid(ppy) + 1) as u32,
        }
    }

    pub fn offset(self, n: i64) -> Self {
        Self::from_ordinal(self.freq, self.ordinal() + n)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.freq {
            Frequency::Monthly => write!(f, "{}-{:02}", self.year, self.sub),
            Frequency::Quarterly => write!(f, "{}Q{}", self.year, self.sub),
            Frequency::Annual => write!(f, "{}", self.year),
        }
    }
}

impl FromStr for Period {
    type Err = SeriesError;

    /// `1990Q1`, `1990-01` or `1990`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SeriesError::BadPeriod(s.to_string());
        let s = s.trim();
        if let Some((y, q)) = s.split_once(['Q', 'q']) {
            return Period::new(
                Frequency::Quarterly,
                y.parse().map_err(|_| bad())?,
                q.parse().map_err(|_| bad())?,
            );
        }
        if let Some((y, m)) = s.split_once('-') {
            return Period::new(
                Frequency::Monthly,
                y.parse().map_err(|_| bad())?,
                m.parse().map_err(|_| bad())?,
            );
        }
        Period::new(Frequency::Annual, s.parse().map_err(|_| bad())?, 1)
    }
}

impl Serialize for Period {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeriesError {
    #[error("invalid period `{0}`")]
    BadPeriod(String),
    #[error("column `{column}` has {got} values, index has {expected}")]
    Ragged {
        column: String,
        expected: usize,
        got: usize,
    },
    #[error("start period {start} is not {freq}")]
    FrequencyMismatch { start: Period, freq: Frequency },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("{0}")]
    Storage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    /// Source tag recorded for provenance.
    #[serde(default)]
    pub source: String,
    pub values: Vec<Option<f64>>,
}

impl Column {
    pub fn new(name: impl Into<String>, source: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self {
            name: name.into(),
            source: source.into(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawTable {
    frequency: Frequency,
    start: Period,
    #[serde(default)]
    len: Option<usize>,
    columns: Vec<Column>,
}

/// Named series over a regular time index. The index is `len` consecutive
/// periods from `start`; every column has exactly `len` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct SeriesTable {
    frequency: Frequency,
    start: Period,
    len: usize,
    columns: Vec<Column>,
}

impl TryFrom<RawTable> for SeriesTable {
    type Error = SeriesError;

    fn try_from(raw: RawTable) -> Result<Self, Self::Error> {
        let len = raw
            .len
            .or_else(|| raw.columns.first().map(|c| c.values.len()))
            .unwrap_or(0);
        SeriesTable::new(raw.frequency, raw.start, len, raw.columns)
    }
}

impl From<SeriesTable> for RawTable {
    fn from(t: SeriesTable) -> Self {
        RawTable {
            frequency: t.frequency,
            start: t.start,
            len: Some(t.len),
            columns: t.columns,
        }
    }
}

impl SeriesTable {
    pub fn new(frequency: Frequency, start: Period, len: usize, columns: Vec<Column>) -> Result<Self, SeriesError> {
        if start.freq != frequency {
            return Err(SeriesError::FrequencyMismatch { start, freq: frequency });
        }
        let mut names = std::collections::HashSet::new();
        for c in &columns {
            if c.values.len() != len {
                return Err(SeriesError::Ragged {
                    column: c.name.clone(),
                    expected: len,
                    got: c.values.len(),
                });
            }
            if !names.insert(c.name.as_str()) {
                return Err(SeriesError::DuplicateColumn(c.name.clone()));
            }
        }
        Ok(Self {
            frequency,
            start,
            len,
            columns,
        })
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn start(&self) -> Period {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn index(&self) -> Vec<Period> {
        (0..self.len as i64).map(|i| self.start.offset(i)).collect()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&Column, SeriesError> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| SeriesError::UnknownColumn(name.to_string()))
    }

    pub fn push_column(&mut self, column: Column) -> Result<(), SeriesError> {
        if column.values.len() != self.len {
            return Err(SeriesError::Ragged {
                column: column.name,
                expected: self.len,
                got: column.values.len(),
            });
        }
        if self.columns.iter().any(|c| c.name == column.name) {
            return Err(SeriesError::DuplicateColumn(column.name));
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn sidecar_path(csv: &Path) -> PathBuf {
        let mut p = csv.as_os_str().to_owned();
        p.push(".meta.json");
        PathBuf::from(p)
    }

    /// Writes `period,col...` CSV plus a `<file>.meta.json` sidecar holding
    /// frequency and per-column sources.
    pub fn save_csv(&self, path: &Path) -> Result<(), SeriesError> {
        let storage = |e: &dyn fmt::Display| SeriesError::Storage(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(|e| storage(&e))?;
        let mut header = vec!["period".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header).map_err(|e| storage(&e))?;
        for (i, p) in self.index().iter().enumerate() {
            let mut row = vec![p.to_string()];
            row.extend(
                self.columns
                    .iter()
                    .map(|c| c.values[i].map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&row).map_err(|e| storage(&e))?;
        }
        w.flush().map_err(|e| storage(&e))?;
        let meta = serde_json::json!({
            "format_version": 1,
            "frequency": self.frequency,
            "start": self.start,
            "columns": self.columns.iter().map(|c| serde_json::json!({"name": c.name, "source": c.source})).collect::<Vec<_>>(),
        });
        std::fs::write(
            Self::sidecar_path(path),
            serde_json::to_string_pretty(&meta).expect("json"),
        )
        .map_err(|e| storage(&e))
    }

    pub fn load_csv(path: &Path) -> Result<Self, SeriesError> {
        let storage = |e: &dyn fmt::Display| SeriesError::Storage(format!("{}: {e}", path.display()));
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(path)).map_err(|e| storage(&e))?)
                .map_err(|e| storage(&e))?;
        let frequency: Frequency = serde_json::from_value(meta["frequency"].clone()).map_err(|e| storage(&e))?;
        let sources: Vec<(String, String)> = meta["columns"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|c| {
                (
                    c["name"].as_str().unwrap_or_default().to_string(),
                    c["source"].as_str().unwrap_or_default().to_string(),
                )
            })
            .collect();

        let mut r = csv::Reader::from_path(path).map_err(|e| storage(&e))?;
        let headers: Vec<String> = r
            .headers()
            .map_err(|e| storage(&e))?
            .iter()
            .skip(1)
            .map(String::from)
            .collect();
        let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); headers.len()];
        let mut start = None;
        for rec in r.records() {
            let rec = rec.map_err(|e| storage(&e))?;
            if start.is_none() {
                start = Some(rec.get(0).unwrap_or_default().parse::<Period>()?);
            }
            for (i, col) in columns.iter_mut().enumerate() {
                let cell = rec.get(i + 1).unwrap_or_default().trim();
                col.push(if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse().map_err(|e| storage(&e))?)
                });
            }
        }
        let start = match start {
            Some(s) => s,
            None => serde_json::from_value(meta["start"].clone()).map_err(|e| storage(&e))?,
        };
        let len = columns.first().map_or(0, Vec::len);
        let columns = headers
            .into_iter()
            .zip(columns)
            .map(|(name, values)| {
                let source = sources
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, s)| s.clone())
                    .unwrap_or_default();
                Column::new(name, source, values)
            })
            .collect();
        SeriesTable::new(frequency, start, len, columns)
    }
}
