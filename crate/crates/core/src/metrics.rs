//! Per-dataset performance from predictions and gold labels.
//!
//! Gold files are tab-separated `index<TAB>label` rows under a single typed
//! header line of `key=value` pairs:
//!
//! ```text
//! dataset_id=MRPC	task_kind=classification	metric_kind=acc_f1_mean	num_labels=2
//! 0	1
//! 1	0
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::Pred;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {preds} predictions vs {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no samples")]
    Empty,
    #[error("need at least 2 samples for a correlation, got {0}")]
    TooFewSamples(usize),
    #[error("non-binary label {0} in F1 computation")]
    NonBinary(i64),
    #[error("correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("metric {metric:?} does not apply to a {task:?} task")]
    TaskMismatch { task: TaskKind, metric: MetricKind },
    #[error("sample {index}: expected a class label, got {value}")]
    NotAClass { index: usize, value: f64 },
    #[error("gold label {label} at index {index} outside 0..{num_labels}")]
    LabelOutOfRange {
        index: usize,
        label: i64,
        num_labels: u64,
    },
    #[error("gold file line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    AccF1Mean,
    PearsonSpearmanMean,
}

impl TaskKind {
    fn as_str(self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::Regression => "regression",
        }
    }
}

impl MetricKind {
    fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::AccF1Mean => "acc_f1_mean",
            MetricKind::PearsonSpearmanMean => "pearson_spearman_mean",
        }
    }

    pub fn applies_to(self, task: TaskKind) -> bool {
        matches!(
            (self, task),
            (
                MetricKind::Accuracy | MetricKind::AccF1Mean,
                TaskKind::Classification
            ) | (MetricKind::PearsonSpearmanMean, TaskKind::Regression)
        )
    }
}

/// Gold labels for one dataset's test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldFile {
    pub dataset_id: String,
    pub task_kind: TaskKind,
    pub metric_kind: MetricKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_labels: Option<u64>,
    pub labels: Vec<Pred>,
}

impl GoldFile {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.labels.is_empty() {
            return Err(MetricError::Empty);
        }
        if !self.metric_kind.applies_to(self.task_kind) {
            return Err(MetricError::TaskMismatch {
                task: self.task_kind,
                metric: self.metric_kind,
            });
        }
        if self.task_kind == TaskKind::Classification {
            let classes = as_classes(&self.labels)?;
            if let Some(c) = self.num_labels {
                if let Some((index, &label)) = classes
                    .iter()
                    .enumerate()
                    .find(|(_, &l)| l < 0 || l as u64 >= c)
                {
                    return Err(MetricError::LabelOutOfRange {
                        index,
                        label,
                        num_labels: c,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, MetricError> {
        let err = |line: usize, message: String| MetricError::Parse { line, message };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| err(1, "missing header".into()))?;

        let (mut dataset_id, mut task, mut metric, mut num_labels) = (None, None, None, None);
        for pair in header.split('\t').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| err(1, format!("header field `{pair}` is not key=value")))?;
            match key.trim() {
                "dataset_id" => dataset_id = Some(value.trim().to_string()),
                "task_kind" => {
                    task = Some(match value.trim() {
                        "classification" => TaskKind::Classification,
                        "regression" => TaskKind::Regression,
                        other => return Err(err(1, format!("unknown task_kind `{other}`"))),
                    })
                }
                "metric_kind" => {
                    metric = Some(match value.trim() {
                        "accuracy" => MetricKind::Accuracy,
                        "acc_f1_mean" => MetricKind::AccF1Mean,
                        "pearson_spearman_mean" => MetricKind::PearsonSpearmanMean,
                        other => return Err(err(1, format!("unknown metric_kind `{other}`"))),
                    })
                }
                "num_labels" => {
                    num_labels =
                        Some(value.trim().parse::<u64>().map_err(|_| {
                            err(1, format!("invalid num_labels `{}`", value.trim()))
                        })?)
                }
                other => return Err(err(1, format!("unknown header key `{other}`"))),
            }
        }
        let dataset_id = dataset_id.ok_or_else(|| err(1, "header lacks dataset_id".into()))?;
        let task_kind = task.ok_or_else(|| err(1, "header lacks task_kind".into()))?;
        let metric_kind = metric.ok_or_else(|| err(1, "header lacks metric_kind".into()))?;

        let mut labels = Vec::new();
        for (i, raw) in lines {
            if raw.trim().is_empty() {
                continue;
            }
            let line = i + 1;
            let (idx, label) = raw
                .split_once('\t')
                .ok_or_else(|| err(line, "expected `index<TAB>label`".into()))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| err(line, format!("invalid index `{}`", idx.trim())))?;
            if idx != labels.len() {
                return Err(err(
                    line,
                    format!("index {idx} out of sequence, expected {}", labels.len()),
                ));
            }
            let label = label.trim();
            let value = match task_kind {
                TaskKind::Classification => label.parse::<i64>().map(Pred::Class).ok(),
                TaskKind::Regression => label
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Pred::Value),
            }
            .ok_or_else(|| err(line, format!("invalid label `{label}`")))?;
            labels.push(value);
        }
        let gold = GoldFile {
            dataset_id,
            task_kind,
            metric_kind,
            num_labels,
            labels,
        };
        gold.validate()?;
        Ok(gold)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "dataset_id={}\ttask_kind={}\tmetric_kind={}",
            self.dataset_id,
            self.task_kind.as_str(),
            self.metric_kind.as_str()
        );
        if let Some(c) = self.num_labels {
            write!(out, "\tnum_labels={c}").unwrap();
        }
        out.push('\n');
        for (i, label) in self.labels.iter().enumerate() {
            match label {
                Pred::Class(c) => writeln!(out, "{i}\t{c}"),
                Pred::Value(v) => writeln!(out, "{i}\t{v:.6}"),
            }
            .unwrap();
        }
        out
    }
}

fn check_lengths(preds: usize, golds: usize) -> Result<(), MetricError> {
    if preds != golds {
        return Err(MetricError::LengthMismatch { preds, golds });
    }
    if preds == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn accuracy(preds: &[i64], golds: &[i64]) -> Result<f64, MetricError> {
    check_lengths(preds.len(), golds.len())?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// F1 of the positive class `1`; 0 when precision + recall is 0.
pub fn f1_binary(preds: &[i64], golds: &[i64]) -> Result<f64, MetricError> {
    check_lengths(preds.len(), golds.len())?;
    if let Some(&bad) = preds.iter().chain(golds).find(|&&l| l != 0 && l != 1) {
        return Err(MetricError::NonBinary(bad));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &g) in preds.iter().zip(golds) {
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fneg += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fneg == 0 {
        0.0
    } else {
        tp as f64 / (tp + fneg) as f64
    };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_lengths(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(MetricError::TooFewSamples(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(MetricError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(MetricError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing the average of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average-tied ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_lengths(x.len(), y.len())?;
    pearson(&average_ranks(x), &average_ranks(y))
}

fn as_classes(labels: &[Pred]) -> Result<Vec<i64>, MetricError> {
    labels
        .iter()
        .enumerate()
        .map(|(index, p)| match *p {
            Pred::Class(c) => Ok(c),
            Pred::Value(value) => Err(MetricError::NotAClass { index, value }),
        })
        .collect()
}

/// Dataset performance on a 0–100 scale. Never rounded.
pub fn dataset_metric(gold: &GoldFile, preds: &[Pred]) -> Result<f64, MetricError> {
    if !gold.metric_kind.applies_to(gold.task_kind) {
        return Err(MetricError::TaskMismatch {
            task: gold.task_kind,
            metric: gold.metric_kind,
        });
    }
    check_lengths(preds.len(), gold.labels.len())?;
    match gold.metric_kind {
        MetricKind::Accuracy => {
            let (p, g) = (as_classes(preds)?, as_classes(&gold.labels)?);
            Ok(100.0 * accuracy(&p, &g)?)
        }
        MetricKind::AccF1Mean => {
            let (p, g) = (as_classes(preds)?, as_classes(&gold.labels)?);
            Ok(100.0 * (accuracy(&p, &g)? + f1_binary(&p, &g)?) / 2.0)
        }
        MetricKind::PearsonSpearmanMean => {
            let p: Vec<f64> = preds.iter().map(|v| v.as_f64()).collect();
            let g: Vec<f64> = gold.labels.iter().map(|v| v.as_f64()).collect();
            Ok(100.0 * (pearson(&p, &g)? + spearman(&p, &g)?) / 2.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap(), 0.5);
        assert!(matches!(
            accuracy(&[1], &[1, 0]),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert_eq!(accuracy(&[], &[]), Err(MetricError::Empty));
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_binary(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap(), 0.5);
        assert_eq!(f1_binary(&[0, 0, 0], &[1, 0, 0]).unwrap(), 0.0);
        assert!((f1_binary(&[1, 1, 1], &[1, 1, 0]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(f1_binary(&[2, 0], &[1, 0]), Err(MetricError::NonBinary(2)));
    }

    #[test]
    fn correlation_examples() {
        assert!((pearson(&[1., 2., 3.], &[2., 4., 6.]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(
            pearson(&[1., 1., 1.], &[1., 2., 3.]),
            Err(MetricError::ZeroVariance("x"))
        );
        assert_eq!(average_ranks(&[1., 2., 2.]), vec![1.0, 2.5, 2.5]);
        let x = [0.3, -1.0, 2.5, 7.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            spearman(&[2., 2., 2.], &[1., 2., 3.]),
            Err(MetricError::ZeroVariance("x"))
        );
    }

    fn gold(metric: MetricKind, task: TaskKind, labels: Vec<Pred>) -> GoldFile {
        GoldFile {
            dataset_id: "d".into(),
            task_kind: task,
            metric_kind: metric,
            num_labels: None,
            labels,
        }
    }

    #[test]
    fn dataset_metric_dispatch() {
        let cls = |v: &[i64]| v.iter().map(|&c| Pred::Class(c)).collect::<Vec<_>>();
        let g = gold(
            MetricKind::AccF1Mean,
            TaskKind::Classification,
            cls(&[1, 1, 0, 0]),
        );
        assert_eq!(dataset_metric(&g, &cls(&[1, 0, 1, 0])).unwrap(), 50.0);

        let g = gold(
            MetricKind::Accuracy,
            TaskKind::Classification,
            cls(&[1, 2, 0]),
        );
        assert_eq!(dataset_metric(&g, &cls(&[1, 2, 0])).unwrap(), 100.0);

        let vals = |v: &[f64]| v.iter().map(|&c| Pred::Value(c)).collect::<Vec<_>>();
        let g = gold(
            MetricKind::PearsonSpearmanMean,
            TaskKind::Regression,
            vals(&[1., 2., 3.]),
        );
        assert!((dataset_metric(&g, &vals(&[2., 4., 6.])).unwrap() - 100.0).abs() < 1e-12);

        let bad = gold(
            MetricKind::PearsonSpearmanMean,
            TaskKind::Classification,
            cls(&[1, 0]),
        );
        assert!(matches!(
            dataset_metric(&bad, &cls(&[1, 0])),
            Err(MetricError::TaskMismatch { .. })
        ));
        let g = gold(MetricKind::Accuracy, TaskKind::Classification, cls(&[1, 0]));
        assert!(matches!(
            dataset_metric(&g, &cls(&[1])),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert!(matches!(
            dataset_metric(&g, &vals(&[1.0, 0.0])),
            Err(MetricError::NotAClass { .. })
        ));
    }

    #[test]
    fn gold_file_text_round_trip() {
        let text = "dataset_id=MRPC\ttask_kind=classification\tmetric_kind=acc_f1_mean\tnum_labels=2\n0\t1\n1\t0\n";
        let g = GoldFile::parse(text).unwrap();
        assert_eq!(g.labels, vec![Pred::Class(1), Pred::Class(0)]);
        assert_eq!(g.to_text(), text);

        let sts = "dataset_id=STS-B\ttask_kind=regression\tmetric_kind=pearson_spearman_mean\n0\t4.5\n1\t1.25\n";
        let g = GoldFile::parse(sts).unwrap();
        assert_eq!(g.labels[1], Pred::Value(1.25));
    }

    #[test]
    fn gold_file_rejects_invalid() {
        assert!(GoldFile::parse("dataset_id=x\ttask_kind=classification\n0\t1\n").is_err());
        assert!(matches!(
            GoldFile::parse("dataset_id=x\ttask_kind=classification\tmetric_kind=accuracy\tnum_labels=2\n0\t2\n"),
            Err(MetricError::LabelOutOfRange { .. })
        ));
        assert!(matches!(
            GoldFile::parse(
                "dataset_id=x\ttask_kind=classification\tmetric_kind=pearson_spearman_mean\n0\t1\n"
            ),
            Err(MetricError::TaskMismatch { .. })
        ));
        assert_eq!(
            GoldFile::parse(
                "dataset_id=x\ttask_kind=regression\tmetric_kind=pearson_spearman_mean\n"
            ),
            Err(MetricError::Empty)
        );
        assert!(GoldFile::parse(
            "dataset_id=x\ttask_kind=classification\tmetric_kind=accuracy\n1\t1\n"
        )
        .is_err());
    }
}
