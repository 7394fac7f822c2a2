//! Deterministic data-processing tools: synthetic series, imputation,
//! outlier detection, frequency harmonization, feature derivation and
//! validation.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::registry::{args, SemanticType, ToolContext, ToolError, ToolParam, ToolRegistry, ToolSpec};
use super::series::{Column, Frequency, Period, SeriesError, SeriesTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("need at least {need} observed values, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error("series is empty")]
    Empty,
    #[error("cannot convert {from} to {to}")]
    IncompatibleFrequency { from: Frequency, to: Frequency },
    #[error("{0}")]
    Series(#[from] SeriesError),
}

pub type Series = Vec<Option<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Spec {
    pub mean: f64,
    pub ar1: f64,
    pub noise_sd: f64,
}

/// AR(1) realization `x_t = mean + ar1 (x_{t-1} - mean) + e_t`,
/// `e_t ~ N(0, noise_sd²)`, starting from `x_{-1} = mean`. Quarterly index
/// from 1990Q1.
pub fn generate_synthetic_series(length: usize, spec: Ar1Spec, seed: u64) -> Result<SeriesTable, DataError> {
    if length == 0 {
        return Err(DataError::Domain("length must be positive".into()));
    }
    if !(spec.ar1 > -1.0 && spec.ar1 < 1.0) {
        return Err(DataError::Domain(format!("ar1 = {} outside (-1, 1)", spec.ar1)));
    }
    if !spec.noise_sd.is_finite() || spec.noise_sd < 0.0 || !spec.mean.is_finite() {
        return Err(DataError::Domain("noise_sd must be finite and ≥ 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spec.noise_sd).map_err(|e| DataError::Domain(e.to_string()))?;
    let mut prev = spec.mean;
    let values = (0..length)
        .map(|_| {
            let x = spec.mean + spec.ar1 * (prev - spec.mean) + normal.sample(&mut rng);
            prev = x;
            Some(x)
        })
        .collect();
    let start = Period::new(Frequency::Quarterly, 1990, 1)?;
    Ok(SeriesTable::new(
        Frequency::Quarterly,
        start,
        length,
        vec![Column::new("y", "synthetic", values)],
    )?)
}

/// Linear interpolation between observed neighbours; leading and trailing
/// gaps take the nearest observed value.
pub fn impute_linear(series: &[Option<f64>]) -> Result<Vec<f64>, DataError> {
    let observed: Vec<(usize, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    if observed.len() < 2 {
        return Err(DataError::TooFewObservations {
            need: 2,
            got: observed.len(),
        });
    }
    let (first, last) = (observed[0], observed[observed.len() - 1]);
    let mut out = Vec::with_capacity(series.len());
    let mut seg = 0;
    for (i, v) in series.iter().enumerate() {
        if let Some(v) = v {
            out.push(*v);
            continue;
        }
        if i < first.0 {
            out.push(first.1);
        } else if i > last.0 {
            out.push(last.1);
        } else {
            while observed[seg + 1].0 < i {
                seg += 1;
            }
            let (i0, x0) = observed[seg];
            let (i1, x1) = observed[seg + 1];
            out.push(x0 + (x1 - x0) * (i - i0) as f64 / (i1 - i0) as f64);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum OutlierMethod {
    Zscore { threshold: f64 },
    Iqr { k: f64 },
}

/// Linear-interpolation quantile of sorted data (`(n-1) p` positioning).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Indices of outlying observations. Missing values are skipped; the
/// z-score uses the population standard deviation.
pub fn detect_outliers(series: &[Option<f64>], method: OutlierMethod) -> Result<Vec<usize>, DataError> {
    let obs: Vec<(usize, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    if obs.is_empty() {
        return Err(DataError::Empty);
    }
    let n = obs.len() as f64;
    match method {
        OutlierMethod::Zscore { threshold } => {
            let mean = obs.iter().map(|o| o.1).sum::<f64>() / n;
            let sd = (obs.iter().map(|o| (o.1 - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sd == 0.0 {
                return Ok(Vec::new());
            }
            Ok(obs
                .iter()
                .filter(|(_, x)| ((x - mean) / sd).abs() > threshold)
                .map(|o| o.0)
                .collect())
        }
        OutlierMethod::Iqr { k } => {
            let mut sorted: Vec<f64> = obs.iter().map(|o| o.1).collect();
            sorted.sort_by(f64::total_cmp);
            let q1 = quantile_sorted(&sorted, 0.25);
            let q3 = quantile_sorted(&sorted, 0.75);
            let iqr = q3 - q1;
            let (lo, hi) = (q1 - k * iqr, q3 + k * iqr);
            Ok(obs.iter().filter(|(_, x)| *x < lo || *x > hi).map(|o| o.0).collect())
        }
    }
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let obs: Vec<f64> = values.iter().flatten().copied().collect();
    (!obs.is_empty()).then(|| obs.iter().sum::<f64>() / obs.len() as f64)
}

/// Converts one table to `target`: finer columns are averaged over each
/// target period (missing values ignored), coarser columns repeated.
pub fn convert_frequency(table: &SeriesTable, target: Frequency) -> Result<SeriesTable, DataError> {
    let from = table.frequency();
    let (fp, tp) = (from.periods_per_year(), target.periods_per_year());
    let incompatible = DataError::IncompatibleFrequency { from, to: target };
    if fp == tp {
        return Ok(table.clone());
    }
    if fp > tp {
        if fp % tp != 0 {
            return Err(incompatible);
        }
        let r = (fp / tp) as usize;
        let start = table.start();
        let offset = start.ordinal().rem_euclid(r as i64) as usize;
        if offset != 0 {
            return Err(DataError::Domain(format!("{start} does not begin a {target} period")));
        }
        let len = table.len().div_ceil(r);
        let new_start = Period::from_ordinal(target, start.ordinal().div_euclid(r as i64));
        let columns = table
            .columns()
            .iter()
            .map(|c| {
                Column::new(
                    c.name.clone(),
                    c.source.clone(),
                    c.values.chunks(r).map(mean_of).collect(),
                )
            })
            .collect();
        Ok(SeriesTable::new(target, new_start, len, columns)?)
    } else {
        if tp % fp != 0 {
            return Err(incompatible);
        }
        let r = (tp / fp) as usize;
        let new_start = Period::from_ordinal(target, table.start().ordinal() * r as i64);
        let columns = table
            .columns()
            .iter()
            .map(|c| {
                let values = c.values.iter().flat_map(|v| std::iter::repeat_n(*v, r)).collect();
                Column::new(c.name.clone(), c.source.clone(), values)
            })
            .collect();
        Ok(SeriesTable::new(target, new_start, table.len() * r, columns)?)
    }
}

/// Converts every table to `target` and merges them on the aligned index.
/// Column names used by more than one table become `name.source`.
pub fn harmonize_merge(tables: &[SeriesTable], target: Frequency) -> Result<SeriesTable, DataError> {
    if tables.is_empty() {
        return Err(DataError::Empty);
    }
    let converted = tables
        .iter()
        .map(|t| convert_frequency(t, target))
        .collect::<Result<Vec<_>, _>>()?;
    let start = converted.iter().map(|t| t.start().ordinal()).min().expect("non-empty");
    let end = converted
        .iter()
        .map(|t| t.start().ordinal() + t.len() as i64)
        .max()
        .expect("non-empty");
    let len = (end - start) as usize;

    let mut uses: HashMap<&str, usize> = HashMap::new();
    for t in &converted {
        for c in t.columns() {
            *uses.entry(c.name.as_str()).or_default() += 1;
        }
    }
    let mut columns: Vec<Column> = Vec::new();
    for (ti, t) in converted.iter().enumerate() {
        let shift = (t.start().ordinal() - start) as usize;
        for c in t.columns() {
            let mut name = c.name.clone();
            if uses[c.name.as_str()] > 1 {
                let tag = if c.source.is_empty() {
                    format!("src{}", ti + 1)
                } else {
                    c.source.clone()
                };
                name = format!("{}.{tag}", c.name);
                while columns.iter().any(|x| x.name == name) {
                    name.push('_');
                }
            }
            let mut values = vec![None; len];
            values[shift..shift + c.values.len()].copy_from_slice(&c.values);
            columns.push(Column::new(name, c.source.clone(), values));
        }
    }
    Ok(SeriesTable::new(
        target,
        Period::from_ordinal(target, start),
        len,
        columns,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureRecipe {
    GrowthRate(String),
    MovingAverage { column: String, window: usize },
    Ratio { numerator: String, denominator: String },
}

impl FeatureRecipe {
    pub fn output_name(&self) -> String {
        match self {
            FeatureRecipe::GrowthRate(c) => format!("{c}_growth"),
            FeatureRecipe::MovingAverage { column, window } => format!("{column}_ma{window}"),
            FeatureRecipe::Ratio { numerator, denominator } => format!("{numerator}_to_{denominator}"),
        }
    }
}

/// Simple returns; first value and zero denominators are missing.
pub fn growth_rate(x: &[Option<f64>]) -> Series {
    let mut out = vec![None; x.len()];
    for t in 1..x.len() {
        if let (Some(prev), Some(cur)) = (x[t - 1], x[t]) {
            if prev != 0.0 {
                out[t] = Some((cur - prev) / prev);
            }
        }
    }
    out
}

/// Trailing mean over `window` values; the first `window - 1` are missing,
/// as is any window containing a missing value.
pub fn moving_average(x: &[Option<f64>], window: usize) -> Result<Series, DataError> {
    if window == 0 {
        return Err(DataError::Domain("window must be at least 1".into()));
    }
    Ok((0..x.len())
        .map(|t| {
            if t + 1 < window {
                return None;
            }
            let w = &x[t + 1 - window..=t];
            w.iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / window as f64)
        })
        .collect())
}

pub fn ratio(a: &[Option<f64>], b: &[Option<f64>]) -> Series {
    a.iter()
        .zip(b)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) if *b != 0.0 => Some(a / b),
            _ => None,
        })
        .collect()
}

pub fn derive_features(table: &SeriesTable, recipes: &[FeatureRecipe]) -> Result<SeriesTable, DataError> {
    let mut out = table.clone();
    for recipe in recipes {
        let values = match recipe {
            FeatureRecipe::GrowthRate(c) => growth_rate(&table.column(c)?.values),
            FeatureRecipe::MovingAverage { column, window } => moving_average(&table.column(column)?.values, *window)?,
            FeatureRecipe::Ratio { numerator, denominator } => {
                ratio(&table.column(numerator)?.values, &table.column(denominator)?.values)
            }
        };
        out.push_column(Column::new(recipe.output_name(), "derived", values))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationRules {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_missing_fraction: Option<f64>,
    /// Inclusive `[lo, hi]` per column.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ranges: BTreeMap<String, (f64, f64)>,
}

impl ValidationRules {
    pub fn is_empty(&self) -> bool {
        self.max_missing_fraction.is_none() && self.ranges.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnReport {
    pub name: String,
    pub missing_fraction: f64,
    /// Indices of values outside the column's declared range.
    pub range_violations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub rule: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub columns: Vec<ColumnReport>,
    pub rules: Vec<RuleOutcome>,
    pub passed: bool,
}

/// Checks a table against the rules; an empty rule set gives an empty,
/// passing report. Unknown range columns fail their rule.
pub fn validate_table(table: &SeriesTable, rules: &ValidationRules) -> TableReport {
    if rules.is_empty() {
        return TableReport {
            passed: true,
            ..Default::default()
        };
    }
    let columns: Vec<ColumnReport> = table
        .columns()
        .iter()
        .map(|c| {
            let missing = c.values.iter().filter(|v| v.is_none()).count();
            let range_violations = rules
                .ranges
                .get(&c.name)
                .map(|(lo, hi)| {
                    c.values
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| v.is_some_and(|v| v < *lo || v > *hi))
                        .map(|(i, _)| i)
                        .collect()
                })
                .unwrap_or_default();
            ColumnReport {
                name: c.name.clone(),
                missing_fraction: if c.values.is_empty() {
                    0.0
                } else {
                    missing as f64 / c.values.len() as f64
                },
                range_violations,
            }
        })
        .collect();
    let mut outcomes = Vec::new();
    if let Some(max) = rules.max_missing_fraction {
        for c in &columns {
            outcomes.push(RuleOutcome {
                rule: format!("max_missing_fraction({}) <= {max}", c.name),
                passed: c.missing_fraction <= max,
            });
        }
    }
    for (name, (lo, hi)) in &rules.ranges {
        let passed = columns
            .iter()
            .find(|c| &c.name == name)
            .is_some_and(|c| c.range_violations.is_empty());
        outcomes.push(RuleOutcome {
            rule: format!("range({name}) in [{lo}, {hi}]"),
            passed,
        });
    }
    TableReport {
        passed: outcomes.iter().all(|o| o.passed),
        columns,
        rules: outcomes,
    }
}

fn fail(tool: &str) -> impl Fn(DataError) -> ToolError + '_ {
    move |e| ToolError::failed(tool, e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("tool results serialize")
}

/// Registers the data tools into `reg`.
pub fn register(reg: &ToolRegistry) -> Result<(), ToolError> {
    use SemanticType as T;

    reg.register(
        ToolSpec::pure(
            "generate_synthetic_series",
            "Deterministic AR(1) quarterly series from 1990Q1.",
            vec![
                ToolParam::required("length", T::Integer, "number of observations"),
                ToolParam::required("mean", T::Number, "long-run mean"),
                ToolParam::required("ar1", T::Number, "autoregressive coefficient in (-1, 1)"),
                ToolParam::required("noise_sd", T::Number, "innovation standard deviation"),
                ToolParam::optional("seed", T::Integer, "defaults to the run seed"),
            ],
            T::Table,
        ),
        |a: &Map<String, Value>, ctx: &ToolContext<'_>| {
            const NAME: &str = "generate_synthetic_series";
            let spec = Ar1Spec {
                mean: args::opt_f64(a, "mean").unwrap_or_default(),
                ar1: args::opt_f64(a, "ar1").unwrap_or_default(),
                noise_sd: args::opt_f64(a, "noise_sd").unwrap_or_default(),
            };
            let length = args::opt_u64(a, "length").unwrap_or_default() as usize;
            let seed = args::opt_u64(a, "seed").unwrap_or(ctx.seed);
            generate_synthetic_series(length, spec, seed)
                .map(|t| to_json(&t))
                .map_err(fail(NAME))
        },
    )?;

    reg.register(
        ToolSpec::pure(
            "impute_missing",
            "Fill gaps: linear interpolation inside, nearest observed value at the ends.",
            vec![
                ToolParam::required("series", T::NumberSeries, "values, null for missing"),
                ToolParam::optional("method", T::Text, "only `linear`"),
            ],
            T::NumberSeries,
        ),
        |a: &Map<String, Value>, _: &ToolContext<'_>| {
            const NAME: &str = "impute_missing";
            if let Some(m) = a.get("method").and_then(Value::as_str) {
                if m != "linear" {
                    return Err(ToolError::failed(NAME, format!("unsupported method `{m}`")));
                }
            }
            impute_linear(&args::series(NAME, a, "series")?)
                .map(|v| json!(v))
                .map_err(fail(NAME))
        },
    )?;

    reg.register(
        ToolSpec::pure(
            "detect_outliers",
            "Indices of outliers by z-score (threshold) or IQR fences (k).",
            vec![
                ToolParam::required("series", T::NumberSeries, "values, null for missing"),
                ToolParam::required("method", T::Text, "`zscore` or `iqr`"),
                ToolParam::optional("threshold", T::Number, "z-score threshold (default 3)"),
                ToolParam::optional("k", T::Number, "IQR multiplier (default 1.5)"),
            ],
            T::DocumentList,
        ),
        |a: &Map<String, Value>, _: &ToolContext<'_>| {
            const NAME: &str = "detect_outliers";
            let method = match args::text(NAME, a, "method")? {
                "zscore" => OutlierMethod::Zscore {
                    threshold: args::opt_f64(a, "threshold").unwrap_or(3.0),
                },
                "iqr" => OutlierMethod::Iqr {
                    k: args::opt_f64(a, "k").unwrap_or(1.5),
                },
                other => return Err(ToolError::failed(NAME, format!("unknown method `{other}`"))),
            };
            detect_outliers(&args::series(NAME, a, "series")?, method)
                .map(|v| json!(v))
                .map_err(fail(NAME))
        },
    )?;

    reg.register(
        ToolSpec::pure(
            "harmonize_merge",
            "Convert tables to one frequency (mean-aggregate or repeat) and merge on the index.",
            vec![
                ToolParam::required("tables", T::TableList, "tables to merge"),
                ToolParam::required("target", T::Text, "monthly, quarterly or annual"),
            ],
            T::Table,
        ),
        |a: &Map<String, Value>, _: &ToolContext<'_>| {
            const NAME: &str = "harmonize_merge";
            let tables: Vec<SeriesTable> = args::decode(NAME, a, "tables")?;
            let target: Frequency = args::decode(NAME, a, "target")?;
            harmonize_merge(&tables, target)
                .map(|t| to_json(&t))
                .map_err(fail(NAME))
        },
    )?;

    reg.register(
        ToolSpec::pure(
            "derive_features",
            "Append growth-rate, moving-average and ratio columns.",
            vec![
                ToolParam::required("table", T::Table, "input table"),
                ToolParam::required("recipes", T::DocumentList, "feature recipes"),
            ],
            T::Table,
        ),
        |a: &Map<String, Value>, _: &ToolContext<'_>| {
            const NAME: &str = "derive_features";
            let table: SeriesTable = args::decode(NAME, a, "table")?;
            let recipes: Vec<FeatureRecipe> = args::decode(NAME, a, "recipes")?;
            derive_features(&table, &recipes)
                .map(|t| to_json(&t))
                .map_err(fail(NAME))
        },
    )?;

    reg.register(
        ToolSpec::pure(
            "validate_table",
            "Per-column missing fractions and range checks against rules.",
            vec![
                ToolParam::required("table", T::Table, "table to check"),
                ToolParam::optional("rules", T::Document, "max_missing_fraction and ranges"),
            ],
            T::Document,
        ),
        |a: &Map<String, Value>, _: &ToolContext<'_>| {
            const NAME: &str = "validate_table";
            let table: SeriesTable = args::decode(NAME, a, "table")?;
            let rules: ValidationRules = match a.get("rules") {
                Some(_) => args::decode(NAME, a, "rules")?,
                None => ValidationRules::default(),
            };
            Ok(to_json(&validate_table(&table, &rules)))
        },
    )?;

    reg.register(
        ToolSpec::filesystem(
            "save_table",
            "Persist a table as CSV with a metadata sidecar.",
            vec![
                ToolParam::required("table", T::Table, "table to save"),
                ToolParam::required("path", T::Text, "CSV path, relative to the run directory"),
            ],
            T::Document,
        ),
        |a: &Map<String, Value>, ctx: &ToolContext<'_>| {
            const NAME: &str = "save_table";
            let table: SeriesTable = args::decode(NAME, a, "table")?;
            let path = ctx.resolve(args::text(NAME, a, "path")?);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| ToolError::failed(NAME, e.to_string()))?;
            }
            table
                .save_csv(&path)
                .map_err(|e| ToolError::failed(NAME, e.to_string()))?;
            Ok(json!({"path": path.display().to_string(), "rows": table.len()}))
        },
    )?;

    reg.register(
        ToolSpec::filesystem(
            "load_table",
            "Load a CSV table saved by save_table.",
            vec![ToolParam::required("path", T::Text, "CSV path")],
            T::Table,
        ),
        |a: &Map<String, Value>, ctx: &ToolContext<'_>| {
            const NAME: &str = "load_table";
            let path = ctx.resolve(args::text(NAME, a, "path")?);
            SeriesTable::load_csv(&path)
                .map(|t| to_json(&t))
                .map_err(|e| ToolError::failed(NAME, e.to_string()))
        },
    )?;
    Ok(())
}
