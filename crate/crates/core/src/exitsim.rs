//! Entropy- and patience-based early exiting over recorded per-exit outputs.
//!
//! # Logits file (version 1)
//!
//! Line-delimited JSON. The first line is a header, every following line is
//! one sample:
//!
//! ```text
//! {"format":"multi-exit-logits","version":1,"num_exits":3,"task_kind":"classification","num_labels":2}
//! {"index":0,"seq_len":12,"logits":[[0.1,-0.3],[1.2,-0.8],[2.0,-1.5]]}
//! ```
//!
//! Regression files use `"task_kind":"regression"` and a `"values"` array of
//! one scalar per exit instead of `"logits"`. `seq_len` is optional.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{exit_id, layer_id, ModelSpec, Shape};
use crate::metrics::{dataset_metric, GoldFile, MetricError, TaskKind};
use crate::scoring::{PerfPoint, ScoringError};
use crate::trace::{submission_flops, Pred, SampleTrace, SubmissionFile, TraceError, TraceStep};

pub const LOGITS_FORMAT: &str = "multi-exit-logits";
pub const LOGITS_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExitError {
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("{policy} needs {expected} outputs")]
    PolicyMismatch {
        policy: &'static str,
        expected: &'static str,
    },
    #[error("patience must be at least 1")]
    InvalidPatience,
    #[error("invalid threshold {0}")]
    InvalidThreshold(f64),
    #[error("sample {index}: {message}")]
    Shape { index: u64, message: String },
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
    #[error("logits file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// Raw outputs of every exit for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitValues {
    /// `L × C` logits.
    Logits(Vec<Vec<f64>>),
    /// One regression value per exit.
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitOutputs {
    pub index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<u64>,
    #[serde(flatten)]
    pub per_exit: ExitValues,
}

impl ExitOutputs {
    pub fn num_exits(&self) -> usize {
        match &self.per_exit {
            ExitValues::Logits(l) => l.len(),
            ExitValues::Values(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ExitPolicy {
    Entropy { threshold: f64 },
    Patience { t: u32 },
    PatienceRegression { t: u32, tau: f64 },
}

impl ExitPolicy {
    /// Short label used for operating points, e.g. `entropy_0.3`. Contains no
    /// `=` or `@`, so it fits file names and `DATASET@OP=PATH` arguments.
    pub fn label(&self) -> String {
        match self {
            ExitPolicy::Entropy { threshold } => format!("entropy_{threshold}"),
            ExitPolicy::Patience { t } => format!("patience_{t}"),
            ExitPolicy::PatienceRegression { t, tau } => format!("patience_{t}_tau_{tau}"),
        }
    }
}

/// Where a sample left the network and what it predicted there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitDecision {
    /// 1-based.
    pub layer: u64,
    pub pred: Pred,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64, ExitError> {
    if probs.is_empty() {
        return Err(ExitError::InvalidDistribution("empty".into()));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(ExitError::InvalidDistribution(format!("entry {p}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(ExitError::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(-probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>())
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn logits<'a>(outputs: &'a ExitOutputs, policy: &'static str) -> Result<&'a [Vec<f64>], ExitError> {
    match &outputs.per_exit {
        ExitValues::Logits(l) if !l.is_empty() => Ok(l),
        ExitValues::Logits(_) => Err(ExitError::Shape {
            index: outputs.index,
            message: "no exits".into(),
        }),
        ExitValues::Values(_) => Err(ExitError::PolicyMismatch {
            policy,
            expected: "classification",
        }),
    }
}

/// Exit at the first layer whose softmax entropy is strictly below
/// `threshold`, else at the last layer.
pub fn entropy_exit(outputs: &ExitOutputs, threshold: f64) -> Result<ExitDecision, ExitError> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(ExitError::InvalidThreshold(threshold));
    }
    let per_exit = logits(outputs, "entropy")?;
    for (l, z) in per_exit.iter().enumerate() {
        if l + 1 == per_exit.len() || entropy(&softmax(z))? < threshold {
            return Ok(ExitDecision {
                layer: l as u64 + 1,
                pred: Pred::Class(argmax(z) as i64),
            });
        }
    }
    unreachable!("last exit always returns")
}

// Shared counter: exit once `t` consecutive exits agree with their predecessor.
fn patience_layer(len: usize, t: u32, agrees: impl Fn(usize) -> bool) -> usize {
    let mut counter = 0;
    for l in 1..len {
        if agrees(l) {
            counter += 1;
        } else {
            counter = 0;
        }
        if counter == t {
            return l;
        }
    }
    len - 1
}

/// Patience-based exiting on class predictions.
pub fn patience_exit(outputs: &ExitOutputs, t: u32) -> Result<ExitDecision, ExitError> {
    if t < 1 {
        return Err(ExitError::InvalidPatience);
    }
    let per_exit = logits(outputs, "patience")?;
    let preds: Vec<usize> = per_exit.iter().map(|z| argmax(z)).collect();
    let l = patience_layer(preds.len(), t, |l| preds[l] == preds[l - 1]);
    Ok(ExitDecision {
        layer: l as u64 + 1,
        pred: Pred::Class(preds[l] as i64),
    })
}

/// Patience-based exiting on regression values: consecutive exits agree when
/// they differ by at most `tau`.
pub fn patience_exit_regression(
    outputs: &ExitOutputs,
    t: u32,
    tau: f64,
) -> Result<ExitDecision, ExitError> {
    if t < 1 {
        return Err(ExitError::InvalidPatience);
    }
    if tau.is_nan() || tau < 0.0 {
        return Err(ExitError::InvalidThreshold(tau));
    }
    let values = match &outputs.per_exit {
        ExitValues::Values(v) if !v.is_empty() => v,
        ExitValues::Values(_) => {
            return Err(ExitError::Shape {
                index: outputs.index,
                message: "no exits".into(),
            })
        }
        ExitValues::Logits(_) => {
            return Err(ExitError::PolicyMismatch {
                policy: "regression patience",
                expected: "regression",
            })
        }
    };
    let l = patience_layer(values.len(), t, |l| {
        (values[l] - values[l - 1]).abs() <= tau
    });
    Ok(ExitDecision {
        layer: l as u64 + 1,
        pred: Pred::Value(values[l]),
    })
}

pub fn apply_policy(policy: ExitPolicy, outputs: &ExitOutputs) -> Result<ExitDecision, ExitError> {
    match policy {
        ExitPolicy::Entropy { threshold } => entropy_exit(outputs, threshold),
        ExitPolicy::Patience { t } => patience_exit(outputs, t),
        ExitPolicy::PatienceRegression { t, tau } => patience_exit_regression(outputs, t, tau),
    }
}

/// Trace of a sample that ran the embedding, layers `1..=layer` and the
/// exit head at `layer`.
pub fn synthesize_trace(
    index: u64,
    decision: ExitDecision,
    seq_len: u64,
    hidden_size: u64,
) -> SampleTrace {
    let mut steps = Vec::with_capacity(decision.layer as usize + 2);
    steps.push(TraceStep::new(Shape::D1(seq_len), "emb"));
    for k in 1..=decision.layer {
        steps.push(TraceStep::new(Shape::D2(seq_len, hidden_size), layer_id(k)));
    }
    steps.push(TraceStep::new(
        Shape::D1(hidden_size),
        exit_id(decision.layer),
    ));
    SampleTrace {
        index,
        pred: decision.pred,
        steps,
    }
}

/// One grid cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub policy: ExitPolicy,
    pub point: PerfPoint,
    pub exit_layers: Vec<u64>,
    pub submission: SubmissionFile,
}

impl SweepCell {
    pub fn mean_exit_layer(&self) -> f64 {
        self.exit_layers.iter().sum::<u64>() as f64 / self.exit_layers.len() as f64
    }
}

/// Runs every policy in `grid` over a dataset's outputs and costs the
/// resulting traces.
pub fn sweep_policy(
    outputs: &[ExitOutputs],
    spec: &ModelSpec,
    seq_lens: &[u64],
    gold: &GoldFile,
    grid: &[ExitPolicy],
) -> Result<Vec<SweepCell>, ExitError> {
    if outputs.len() != seq_lens.len() {
        return Err(ExitError::Misaligned(format!(
            "{} outputs vs {} sequence lengths",
            outputs.len(),
            seq_lens.len()
        )));
    }
    if outputs.len() != gold.len() {
        return Err(ExitError::Misaligned(format!(
            "{} outputs vs {} gold labels",
            outputs.len(),
            gold.len()
        )));
    }
    for (i, o) in outputs.iter().enumerate() {
        if o.index != i as u64 {
            return Err(ExitError::Misaligned(format!(
                "output {i} carries index {}",
                o.index
            )));
        }
        if o.num_exits() as u64 != spec.num_layers {
            return Err(ExitError::Shape {
                index: o.index,
                message: format!("{} exits, model has {}", o.num_exits(), spec.num_layers),
            });
        }
    }
    if gold.task_kind == TaskKind::Regression
        && grid.iter().any(|p| matches!(p, ExitPolicy::Entropy { .. }))
    {
        return Err(ExitError::PolicyMismatch {
            policy: "entropy",
            expected: "classification",
        });
    }

    grid.iter()
        .map(|&policy| {
            let decisions = outputs
                .iter()
                .map(|o| apply_policy(policy, o))
                .collect::<Result<Vec<_>, _>>()?;
            let rows: Vec<SampleTrace> = decisions
                .iter()
                .zip(seq_lens)
                .enumerate()
                .map(|(i, (d, &n))| synthesize_trace(i as u64, *d, n, spec.hidden_size))
                .collect();
            let submission = SubmissionFile::new(gold.dataset_id.clone(), rows)
                .with_operating_point(policy.label());
            let flops = submission_flops(&submission, spec)?.mean;
            let perf = dataset_metric(gold, &submission.preds())?;
            Ok(SweepCell {
                policy,
                point: PerfPoint::new(flops, perf)?,
                exit_layers: decisions.iter().map(|d| d.layer).collect(),
                submission,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct LogitsHeader {
    format: String,
    version: u32,
    num_exits: u64,
    task_kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_labels: Option<u64>,
}

/// Per-exit outputs for one dataset, as read from or written to a logits file.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsFile {
    pub task_kind: TaskKind,
    pub num_exits: u64,
    pub num_labels: Option<u64>,
    pub samples: Vec<ExitOutputs>,
}

impl LogitsFile {
    pub fn parse(text: &str) -> Result<Self, ExitError> {
        let err = |line: usize, message: String| ExitError::Parse { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines
            .next()
            .ok_or_else(|| err(1, "missing header".into()))?;
        let header: LogitsHeader =
            serde_json::from_str(head).map_err(|e| err(1, format!("header: {e}")))?;
        if header.format != LOGITS_FORMAT || header.version != LOGITS_VERSION {
            return Err(err(
                1,
                format!(
                    "unsupported format {} v{} (expected {LOGITS_FORMAT} v{LOGITS_VERSION})",
                    header.format, header.version
                ),
            ));
        }
        if header.task_kind == TaskKind::Classification && header.num_labels.is_none() {
            return Err(err(1, "classification files need num_labels".into()));
        }
        let mut samples = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            let rec: ExitOutputs =
                serde_json::from_str(raw).map_err(|e| err(line, e.to_string()))?;
            if rec.index != samples.len() as u64 {
                return Err(err(
                    line,
                    format!(
                        "index {} out of sequence, expected {}",
                        rec.index,
                        samples.len()
                    ),
                ));
            }
            if rec.num_exits() as u64 != header.num_exits {
                return Err(err(
                    line,
                    format!(
                        "{} exits, header says {}",
                        rec.num_exits(),
                        header.num_exits
                    ),
                ));
            }
            match (&rec.per_exit, header.task_kind) {
                (ExitValues::Logits(rows), TaskKind::Classification) => {
                    let c = header.num_labels.unwrap_or_default() as usize;
                    if let Some(row) = rows.iter().find(|r| r.len() != c) {
                        return Err(err(
                            line,
                            format!("logit row of width {}, expected {c}", row.len()),
                        ));
                    }
                    if rows.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(err(line, "non-finite logit".into()));
                    }
                }
                (ExitValues::Values(v), TaskKind::Regression) => {
                    if v.iter().any(|v| !v.is_finite()) {
                        return Err(err(line, "non-finite value".into()));
                    }
                }
                _ => return Err(err(line, "record kind does not match task_kind".into())),
            }
            samples.push(rec);
        }
        Ok(Self {
            task_kind: header.task_kind,
            num_exits: header.num_exits,
            num_labels: header.num_labels,
            samples,
        })
    }

    pub fn to_text(&self) -> String {
        let header = LogitsHeader {
            format: LOGITS_FORMAT.into(),
            version: LOGITS_VERSION,
            num_exits: self.num_exits,
            task_kind: self.task_kind,
            num_labels: self.num_labels,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.samples {
            writeln!(
                out,
                "{}",
                serde_json::to_string(s).expect("record serializes")
            )
            .unwrap();
        }
        out
    }

    /// Per-sample sequence lengths, falling back to `default` where absent.
    pub fn seq_lens(&self, default: u64) -> Vec<u64> {
        self.samples
            .iter()
            .map(|s| s.seq_len.unwrap_or(default))
            .collect()
    }
}
