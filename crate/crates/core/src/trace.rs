//! Per-sample module traces: the `index / pred / modules` submission format.
//!
//! ```text
//! index	pred	modules
//! 0	1	(10),emb; (10,768),layer_1; (768),exit_1
//! ```
//!
//! Fields are tab-separated, module steps are separated by `;`, and every
//! step is a shape `(d1[,d2])` immediately followed by `,<module id>`.
//! Serialization is canonical (one space after `;`, `\n` line endings, no
//! trailing separator) so the bytes of a submission are stable.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{module_flops, CostError, ModelSpec, Shape};

pub const HEADER: &str = "index\tpred\tmodules";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("row {row}: {source}")]
    Cost {
        row: u64,
        #[source]
        source: CostError,
    },
    #[error("empty submission")]
    Empty,
}

/// A predicted label: an integer class, or a real value for regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Pred {
    Class(i64),
    Value(f64),
}

impl Pred {
    pub fn as_f64(self) -> f64 {
        match self {
            Pred::Class(c) => c as f64,
            Pred::Value(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub shape: Shape,
    pub module_id: String,
}

impl TraceStep {
    pub fn new(shape: Shape, module_id: impl Into<String>) -> Self {
        Self {
            shape,
            module_id: module_id.into(),
        }
    }
}

/// One test sample: its prediction and every module executed for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub index: u64,
    pub pred: Pred,
    pub steps: Vec<TraceStep>,
}

/// The rows of one predicted test file plus the metadata that travels with
/// it out of band (dataset id, operating-point label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionFile {
    pub dataset_id: String,
    pub operating_point: Option<String>,
    pub rows: Vec<SampleTrace>,
}

impl SubmissionFile {
    pub fn new(dataset_id: impl Into<String>, rows: Vec<SampleTrace>) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            operating_point: None,
            rows,
        }
    }

    pub fn with_operating_point(mut self, label: impl Into<String>) -> Self {
        self.operating_point = Some(label.into());
        self
    }

    pub fn preds(&self) -> Vec<Pred> {
        self.rows.iter().map(|r| r.pred).collect()
    }
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Parses a trace file. Rows must carry indices `0, 1, 2, ...` in order.
pub fn parse_trace_file(dataset_id: &str, text: &str) -> Result<SubmissionFile, TraceError> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| parse_err(1, 1, "missing header row"))?;
    let cols: Vec<&str> = header.1.split('\t').map(str::trim).collect();
    if cols != ["index", "pred", "modules"] {
        return Err(parse_err(
            header.0 + 1,
            1,
            format!(
                "unknown header `{}`, expected `index<TAB>pred<TAB>modules`",
                header.1.trim_end()
            ),
        ));
    }

    let mut rows = Vec::new();
    for (i, raw) in lines {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row = parse_row(raw, lineno)?;
        let expected = rows.len() as u64;
        if row.index != expected {
            let message = if row.index < expected {
                format!("duplicate index {}", row.index)
            } else {
                format!("index {} out of sequence, expected {expected}", row.index)
            };
            return Err(parse_err(lineno, 1, message));
        }
        rows.push(row);
    }
    Ok(SubmissionFile::new(dataset_id, rows))
}

fn parse_row(raw: &str, line: usize) -> Result<SampleTrace, TraceError> {
    let fields: Vec<&str> = raw.split('\t').collect();
    if fields.len() != 3 {
        return Err(parse_err(
            line,
            1,
            format!("expected 3 tab-separated fields, found {}", fields.len()),
        ));
    }
    let pred_col = fields[0].len() + 2;
    let modules_col = pred_col + fields[1].len() + 1;

    let index = fields[0]
        .trim()
        .parse::<u64>()
        .map_err(|_| parse_err(line, 1, format!("invalid index `{}`", fields[0].trim())))?;
    let pred = parse_pred(fields[1].trim()).ok_or_else(|| {
        parse_err(
            line,
            pred_col,
            format!("invalid pred `{}`", fields[1].trim()),
        )
    })?;

    let modules = fields[2].trim_end_matches(['\r', '\n']);
    if modules.trim().is_empty() {
        return Err(parse_err(line, modules_col, "empty modules column"));
    }
    let mut steps = Vec::new();
    let mut offset = 0;
    for entry in modules.split(';') {
        let col = modules_col + offset + (entry.len() - entry.trim_start().len());
        offset += entry.len() + 1;
        steps.push(parse_step(entry.trim(), line, col)?);
    }
    Ok(SampleTrace { index, pred, steps })
}

fn parse_pred(s: &str) -> Option<Pred> {
    if let Ok(c) = s.parse::<i64>() {
        return Some(Pred::Class(c));
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Pred::Value)
}

fn parse_step(entry: &str, line: usize, col: usize) -> Result<TraceStep, TraceError> {
    if entry.is_empty() {
        return Err(parse_err(line, col, "empty module entry"));
    }
    let rest = entry
        .strip_prefix('(')
        .ok_or_else(|| parse_err(line, col, format!("`{entry}`: shape must start with `(`")))?;
    let close = rest
        .find(')')
        .ok_or_else(|| parse_err(line, col, format!("`{entry}`: unclosed shape parenthesis")))?;
    let dims = rest[..close]
        .split(',')
        .map(|d| d.trim().parse::<u64>().ok().filter(|&v| v > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| {
            parse_err(
                line,
                col,
                format!("`{entry}`: shape dims must be positive integers"),
            )
        })?;
    let shape = match dims[..] {
        [a] => Shape::D1(a),
        [a, b] => Shape::D2(a, b),
        _ => {
            return Err(parse_err(
                line,
                col,
                format!(
                    "`{entry}`: shape must have 1 or 2 dims, found {}",
                    dims.len()
                ),
            ))
        }
    };
    let id = rest[close + 1..]
        .trim_start()
        .strip_prefix(',')
        .map(str::trim)
        .filter(|id| {
            !id.is_empty()
                && !id.contains(|c: char| c.is_whitespace() || c == '(' || c == ')' || c == ',')
        })
        .ok_or_else(|| {
            parse_err(
                line,
                col,
                format!("`{entry}`: expected `,<module id>` after shape"),
            )
        })?;
    Ok(TraceStep::new(shape, id))
}

fn write_pred(out: &mut String, pred: Pred) {
    match pred {
        Pred::Class(c) => write!(out, "{c}"),
        Pred::Value(v) => write!(out, "{v:.6}"),
    }
    .expect("writing to a String");
}

/// Canonical text form of a submission.
pub fn serialize_trace(sub: &SubmissionFile) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for row in &sub.rows {
        write!(out, "{}\t", row.index).unwrap();
        write_pred(&mut out, row.pred);
        out.push('\t');
        for (i, step) in row.steps.iter().enumerate() {
            if i > 0 {
                out.push_str("; ");
            }
            write!(out, "{},{}", step.shape, step.module_id).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Sum of module FLOPs over a row's steps.
pub fn trace_flops(row: &SampleTrace, spec: &ModelSpec) -> Result<u64, TraceError> {
    let wrap = |source| TraceError::Cost {
        row: row.index,
        source,
    };
    row.steps.iter().try_fold(0u64, |acc, step| {
        let decl = spec
            .module(&step.module_id)
            .ok_or_else(|| wrap(CostError::UnknownModule(step.module_id.clone())))?;
        Ok(acc + module_flops(decl, step.shape, spec).map_err(wrap)?)
    })
}

/// Distribution of per-sample FLOPs over a submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsSummary {
    pub mean: f64,
    pub min: u64,
    pub max: u64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub rows: usize,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[u64], pct: u64) -> u64 {
    let rank = (pct as usize * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

/// Mean per-sample FLOPs plus a percentile summary.
pub fn submission_flops(
    sub: &SubmissionFile,
    spec: &ModelSpec,
) -> Result<FlopsSummary, TraceError> {
    if sub.rows.is_empty() {
        return Err(TraceError::Empty);
    }
    let mut per_row = sub
        .rows
        .iter()
        .map(|r| trace_flops(r, spec))
        .collect::<Result<Vec<_>, _>>()?;
    per_row.sort_unstable();
    // Exact integer total; converting once keeps the mean order-independent.
    let total: u128 = per_row.iter().map(|&f| f as u128).sum();
    Ok(FlopsSummary {
        mean: total as f64 / per_row.len() as f64,
        min: per_row[0],
        max: per_row[per_row.len() - 1],
        p50: percentile(&per_row, 50),
        p90: percentile(&per_row, 90),
        p99: percentile(&per_row, 99),
        rows: per_row.len(),
    })
}
