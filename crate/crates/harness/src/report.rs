//! Report assembly: raw per-unit values in, normalized `median(iqr)`
//! tables and summary CSVs out. The same code path serves freshly run
//! protocols and the `report` subcommand, so re-summarizing raw metrics
//! reproduces the original files byte for byte.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rosetta_core::metrics::{normalize_by_baseline, Summary};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// One measured value: a per-datum log-determinant, a per-run distortion,
/// and so on. `nan` marks a group with too few successful runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    /// Sweep label or dataset name.
    pub column: String,
    pub method: String,
    pub metric: String,
    pub index: usize,
    pub value: f64,
    /// Successful runs behind this group.
    pub n_runs: usize,
    /// Digest of the model (or run set) the value came from.
    pub digest: String,
}

/// Which values are subtracted from which.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRule {
    pub reference_method: String,
    /// Reference column; `None` normalizes each column by itself.
    pub reference_column: Option<String>,
    /// Metrics that get normalized; others are reported raw.
    pub metrics: Vec<String>,
}

impl NormRule {
    fn describe(&self, metric: &str) -> String {
        if !self.metrics.iter().any(|m| m == metric) {
            return "none".into();
        }
        match &self.reference_column {
            Some(c) => format!("minus_median({}@{})", self.reference_method, c),
            None => format!("minus_median({})", self.reference_method),
        }
    }
}

/// Everything needed to regenerate a report's tables from its raw rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub name: String,
    pub title: String,
    pub dataset: String,
    pub eigen_floor: f64,
    pub norm: NormRule,
    /// Free-form `key = value` notes (grid notation, selected values, …).
    pub notes: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub meta: ReportMeta,
    pub raw: Vec<RawRow>,
    /// Extra plot-ready series: file suffix and CSV body.
    pub series: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub column: String,
    pub method: String,
    pub metric: String,
    pub summary: Option<Summary>,
    pub n_runs: usize,
    pub norm_choice: String,
}

fn ordered<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    items.filter(|s| seen.insert(*s)).map(str::to_string).collect()
}

fn group<'a>(raw: &'a [RawRow], column: &str, method: &str, metric: &str) -> Vec<&'a RawRow> {
    raw.iter()
        .filter(|r| r.column == column && r.method == method && r.metric == metric)
        .collect()
}

/// Normalized summaries in first-appearance order of (column, method, metric).
pub fn summarize(meta: &ReportMeta, raw: &[RawRow]) -> Vec<SummaryRow> {
    let columns = ordered(raw.iter().map(|r| r.column.as_str()));
    let methods = ordered(raw.iter().map(|r| r.method.as_str()));
    let metrics = ordered(raw.iter().map(|r| r.metric.as_str()));
    let mut out = Vec::new();
    for column in &columns {
        for method in &methods {
            for metric in &metrics {
                let rows = group(raw, column, method, metric);
                if rows.is_empty() {
                    continue;
                }
                let n_runs = rows[0].n_runs;
                let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
                let normalize = meta.norm.metrics.iter().any(|m| m == metric);
                let summary = if values.iter().any(|v| !v.is_finite()) {
                    None
                } else if normalize {
                    let ref_col = meta.norm.reference_column.as_deref().unwrap_or(column);
                    let baseline: Vec<f64> = group(raw, ref_col, &meta.norm.reference_method, metric)
                        .iter()
                        .map(|r| r.value)
                        .collect();
                    if baseline.iter().any(|v| !v.is_finite()) {
                        None
                    } else {
                        normalize_by_baseline(&values, &baseline)
                            .ok()
                            .and_then(|v| Summary::of(&v))
                    }
                } else {
                    Summary::of(&values)
                };
                out.push(SummaryRow {
                    column: column.clone(),
                    method: method.clone(),
                    metric: metric.clone(),
                    summary,
                    n_runs,
                    norm_choice: meta.norm.describe(metric),
                });
            }
        }
    }
    out
}

fn cell(s: &Option<Summary>) -> String {
    s.map_or_else(|| "n/a".to_string(), |s| s.cell())
}

/// Fixed-width text table: one row per method, one column per
/// (metric, column) pair.
pub fn render_table(meta: &ReportMeta, rows: &[SummaryRow]) -> String {
    let columns = ordered(rows.iter().map(|r| r.column.as_str()));
    let methods = ordered(rows.iter().map(|r| r.method.as_str()));
    let metrics = ordered(rows.iter().map(|r| r.metric.as_str()));
    let mut headers = vec!["method".to_string()];
    let mut keys = Vec::new();
    for metric in &metrics {
        for column in &columns {
            if rows.iter().any(|r| &r.metric == metric && &r.column == column) {
                headers.push(if columns.len() > 1 {
                    format!("{metric}[{column}]")
                } else {
                    metric.clone()
                });
                keys.push((metric, column));
            }
        }
    }
    let mut grid = vec![headers];
    for method in &methods {
        let mut line = vec![method.clone()];
        for (metric, column) in &keys {
            let found = rows.iter().find(|r| &r.method == method && &r.metric == *metric && &r.column == *column);
            line.push(found.map_or_else(|| "-".to_string(), |r| cell(&r.summary)));
        }
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "{}", meta.title);
    let _ = writeln!(out, "dataset: {}", meta.dataset);
    for (k, v) in &meta.notes {
        let _ = writeln!(out, "{k}: {v}");
    }
    let _ = writeln!(out);
    for (i, line) in grid.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    out
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "nan".into()
    }
}

pub fn render_summary_csv(meta: &ReportMeta, rows: &[SummaryRow]) -> String {
    let mut out = String::from("dataset,method,metric,median,iqr,n_runs,eigen_floor,norm_choice\n");
    for r in rows {
        let dataset = if r.column == meta.dataset {
            r.column.clone()
        } else {
            format!("{}[{}]", meta.dataset, r.column)
        };
        let (median, iqr) = r
            .summary
            .map_or(("nan".to_string(), "nan".to_string()), |s| (fmt_num(s.median), fmt_num(s.iqr)));
        let _ = writeln!(
            out,
            "{dataset},{},{},{median},{iqr},{},{:e},{}",
            r.method, r.metric, r.n_runs, meta.eigen_floor, r.norm_choice
        );
    }
    out
}

pub fn render_raw_csv(raw: &[RawRow]) -> String {
    let mut out = String::from("column,method,metric,index,value,n_runs,digest\n");
    for r in raw {
        let value = if r.value.is_finite() { format!("{:.17e}", r.value) } else { "nan".into() };
        let _ = writeln!(
            out,
            "{},{},{},{},{value},{},{}",
            r.column, r.method, r.metric, r.index, r.n_runs, r.digest
        );
    }
    out
}

pub fn parse_raw_csv(text: &str) -> Result<Vec<RawRow>, HarnessError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| HarnessError::Report(format!("raw metrics line {}: bad {what}", i + 1));
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 7 {
            return Err(bad("column count"));
        }
        rows.push(RawRow {
            column: cells[0].to_string(),
            method: cells[1].to_string(),
            metric: cells[2].to_string(),
            index: cells[3].parse().map_err(|_| bad("index"))?,
            value: if cells[4] == "nan" {
                f64::NAN
            } else {
                cells[4].parse().map_err(|_| bad("value"))?
            },
            n_runs: cells[5].parse().map_err(|_| bad("n_runs"))?,
            digest: cells[6].to_string(),
        });
    }
    Ok(rows)
}

fn write(path: PathBuf, body: &str) -> Result<PathBuf, HarnessError> {
    std::fs::write(&path, body).map_err(|e| HarnessError::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

/// Writes `<name>_table.txt`, `<name>_summary.csv`, `<name>_raw.csv`,
/// `<name>_meta.json` and any series into `dir`, returning the paths.
pub fn write_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let name = &report.meta.name;
    let rows = summarize(&report.meta, &report.raw);
    let mut written = vec![
        write(dir.join(format!("{name}_table.txt")), &render_table(&report.meta, &rows))?,
        write(dir.join(format!("{name}_summary.csv")), &render_summary_csv(&report.meta, &rows))?,
        write(dir.join(format!("{name}_raw.csv")), &render_raw_csv(&report.raw))?,
    ];
    let meta = serde_json::to_string_pretty(&report.meta).expect("meta serializes") + "\n";
    written.push(write(dir.join(format!("{name}_meta.json")), &meta)?);
    for (suffix, body) in &report.series {
        written.push(write(dir.join(format!("{name}_{suffix}.csv")), body)?);
    }
    Ok(written)
}

/// Rebuilds the table and summary of report `name` in `dir` from its raw
/// metrics and metadata.
pub fn resummarize(dir: &Path, name: &str) -> Result<Vec<PathBuf>, HarnessError> {
    let read = |p: PathBuf| {
        std::fs::read_to_string(&p).map_err(|e| HarnessError::Io { path: p, source: e })
    };
    let meta: ReportMeta = serde_json::from_str(&read(dir.join(format!("{name}_meta.json")))?)
        .map_err(|e| HarnessError::Report(format!("metadata: {e}")))?;
    let raw = parse_raw_csv(&read(dir.join(format!("{name}_raw.csv")))?)?;
    let rows = summarize(&meta, &raw);
    Ok(vec![
        write(dir.join(format!("{name}_table.txt")), &render_table(&meta, &rows))?,
        write(dir.join(format!("{name}_summary.csv")), &render_summary_csv(&meta, &rows))?,
    ])
}
