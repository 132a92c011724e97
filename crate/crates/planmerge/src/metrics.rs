//! Result rows and their CSV forms.
//!
//! One `MetricsRecord` per completed plan execution; aggregation groups them
//! by (method, iteration) across nodes and seeds. Floats are written with
//! Rust's shortest round-trip formatting, so parsing a file reproduces the
//! in-memory values exactly, not just to 12 digits.

use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub seed: u64,
    pub method: u8,
    /// 1-based iteration index on the node that evaluated the plan.
    pub iteration: usize,
    pub operator_id: usize,
    pub node_id: usize,
    pub raw_error: f64,
    pub normalized_error: f64,
    pub improvement: f64,
    pub perceived_result: f64,
    pub next_time: f64,
}

pub const RAW_HEADER: &str =
    "seed,method,iteration,operator_id,node_id,raw_error,normalized_error,improvement,perceived_result,next_time";

pub const AGG_HEADER: &str = "seed_count,method,iteration,mean_improvement,stddev";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: {detail}")]
    Malformed { path: String, line: usize, detail: String },
}

pub fn raw_to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(RAW_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.method,
            r.iteration,
            r.operator_id,
            r.node_id,
            r.raw_error,
            r.normalized_error,
            r.improvement,
            r.perceived_result,
            r.next_time
        )
        .expect("string write");
    }
    out
}

pub fn write_raw_csv(records: &[MetricsRecord], path: &Path) -> Result<(), MetricsError> {
    write_text(&raw_to_csv(records), path)
}

pub fn parse_raw_csv(text: &str, path_for_errors: &str) -> Result<Vec<MetricsRecord>, MetricsError> {
    let malformed = |line: usize, detail: String| MetricsError::Malformed {
        path: path_for_errors.to_string(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == RAW_HEADER => {}
        Some((_, header)) => {
            return Err(malformed(1, format!("unexpected header {header:?}")));
        }
        None => return Err(malformed(1, "empty file".to_string())),
    }
    let mut records = Vec::new();
    for (idx, row) in lines {
        let line = idx + 1;
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 10 {
            return Err(malformed(line, format!("expected 10 fields, got {}", fields.len())));
        }
        fn field<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            s.parse().map_err(|e| format!("bad {name}: {e}"))
        }
        let parse_row = || -> Result<MetricsRecord, String> {
            Ok(MetricsRecord {
                seed: field(fields[0], "seed")?,
                method: field(fields[1], "method")?,
                iteration: field(fields[2], "iteration")?,
                operator_id: field(fields[3], "operator_id")?,
                node_id: field(fields[4], "node_id")?,
                raw_error: field(fields[5], "raw_error")?,
                normalized_error: field(fields[6], "normalized_error")?,
                improvement: field(fields[7], "improvement")?,
                perceived_result: field(fields[8], "perceived_result")?,
                next_time: field(fields[9], "next_time")?,
            })
        };
        records.push(parse_row().map_err(|detail| malformed(line, detail))?);
    }
    Ok(records)
}

pub fn read_raw_csv(path: &Path) -> Result<Vec<MetricsRecord>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_raw_csv(&text, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    /// Distinct seeds contributing to this group.
    pub seed_count: usize,
    pub method: u8,
    pub iteration: usize,
    pub mean_improvement: f64,
    pub stddev: f64,
}

/// Mean and sample standard deviation of improvement per (method,
/// iteration), across all operators, nodes, and seeds. Rows come out sorted
/// by method then iteration; a single observation has stddev 0.
pub fn aggregate(records: &[MetricsRecord]) -> Vec<AggregateRow> {
    use std::collections::{BTreeMap, BTreeSet};
    let mut groups: BTreeMap<(u8, usize), (Vec<f64>, BTreeSet<u64>)> = BTreeMap::new();
    for r in records {
        let entry = groups.entry((r.method, r.iteration)).or_default();
        entry.0.push(r.improvement);
        entry.1.insert(r.seed);
    }
    groups
        .into_iter()
        .map(|((method, iteration), (values, seeds))| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let stddev = if values.len() < 2 {
                0.0
            } else {
                let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                libm::sqrt(ss / (n - 1.0))
            };
            AggregateRow {
                seed_count: seeds.len(),
                method,
                iteration,
                mean_improvement: mean,
                stddev,
            }
        })
        .collect()
}

pub fn agg_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::new();
    out.push_str(AGG_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.seed_count, r.method, r.iteration, r.mean_improvement, r.stddev
        )
        .expect("string write");
    }
    out
}

pub fn write_agg_csv(rows: &[AggregateRow], path: &Path) -> Result<(), MetricsError> {
    write_text(&agg_to_csv(rows), path)
}

fn write_text(text: &str, path: &Path) -> Result<(), MetricsError> {
    std::fs::write(path, text).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })
}
