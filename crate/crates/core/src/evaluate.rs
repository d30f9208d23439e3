//! Submission evaluation shared by the CLI and the service.
//!
//! A [`Benchmark`] holds gold labels and baseline curves; [`evaluate`] turns a
//! model spec plus per-dataset trace files into a [`ScoredSubmission`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{count_params, CostError, ModelSpec, CONVENTION_VERSION};
use crate::metrics::{dataset_metric, GoldFile, MetricError, MetricKind, TaskKind};
use crate::scoring::{
    assign_track, elue_score_dataset, elue_score_overall, interpolate, BaselineSet, Clamp, Overall,
    PerfPoint, ScoringError, Track,
};
use crate::trace::{submission_flops, FlopsSummary, SubmissionFile, TraceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetInfo {
    pub id: &'static str,
    pub name: &'static str,
    pub task_kind: TaskKind,
    pub metric_kind: MetricKind,
}

/// The six scored datasets. The overall score averages over exactly these.
pub const BENCHMARK_DATASETS: [DatasetInfo; 6] = [
    DatasetInfo {
        id: "sst-2",
        name: "SST-2",
        task_kind: TaskKind::Classification,
        metric_kind: MetricKind::Accuracy,
    },
    DatasetInfo {
        id: "imdb",
        name: "IMDb",
        task_kind: TaskKind::Classification,
        metric_kind: MetricKind::Accuracy,
    },
    DatasetInfo {
        id: "mrpc",
        name: "MRPC",
        task_kind: TaskKind::Classification,
        metric_kind: MetricKind::AccF1Mean,
    },
    DatasetInfo {
        id: "sts-b",
        name: "STS-B",
        task_kind: TaskKind::Regression,
        metric_kind: MetricKind::PearsonSpearmanMean,
    },
    DatasetInfo {
        id: "snli",
        name: "SNLI",
        task_kind: TaskKind::Classification,
        metric_kind: MetricKind::Accuracy,
    },
    DatasetInfo {
        id: "scitail",
        name: "SciTail",
        task_kind: TaskKind::Classification,
        metric_kind: MetricKind::Accuracy,
    },
];

pub fn dataset_info(id: &str) -> Option<&'static DatasetInfo> {
    BENCHMARK_DATASETS.iter().find(|d| d.id == id)
}

pub fn dataset_ids() -> Vec<&'static str> {
    BENCHMARK_DATASETS.iter().map(|d| d.id).collect()
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("no gold labels loaded for dataset `{0}`")]
    NoGold(String),
    #[error("gold file for `{0}` does not match the dataset's task or metric")]
    GoldMismatch(String),
    #[error("no baseline curve for dataset `{0}`")]
    NoBaseline(String),
    #[error("submission has no trace files")]
    NoFiles,
    #[error("dataset `{dataset}`: operating point `{label}` appears twice")]
    DuplicatePoint { dataset: String, label: String },
    #[error("model spec: {0}")]
    Spec(#[from] CostError),
    #[error("dataset `{dataset}`: {source}")]
    Trace { dataset: String, source: TraceError },
    #[error("dataset `{dataset}`: {source}")]
    Metric {
        dataset: String,
        source: MetricError,
    },
    #[error("dataset `{dataset}`: {source}")]
    Scoring {
        dataset: String,
        source: ScoringError,
    },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

impl EvalError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::UnknownDataset(_) => "unknown_dataset",
            EvalError::NoGold(_) => "missing_gold",
            EvalError::GoldMismatch(_) => "gold_mismatch",
            EvalError::NoBaseline(_) => "missing_baseline",
            EvalError::NoFiles => "empty_bundle",
            EvalError::DuplicatePoint { .. } => "duplicate_operating_point",
            EvalError::Spec(CostError::Schema(_)) => "schema_error",
            EvalError::Spec(_) => "invalid_spec",
            EvalError::Trace {
                source: TraceError::Empty,
                ..
            } => "empty_submission",
            EvalError::Trace {
                source: TraceError::Parse { .. },
                ..
            } => "trace_parse",
            EvalError::Trace { .. } => "trace_cost",
            EvalError::Metric { .. } => "metric_error",
            EvalError::Scoring { .. } => "scoring_error",
            EvalError::Io { .. } => "io_error",
        }
    }
}

/// Gold labels and baseline curves for the benchmark datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub gold: BTreeMap<String, GoldFile>,
    pub baselines: BaselineSet,
}

pub const BASELINES_FILE: &str = "baselines.json";
pub const GOLD_DIR: &str = "gold";

impl Benchmark {
    /// Loads `<dir>/baselines.json` and every `<dir>/gold/<dataset>.tsv`
    /// that exists. Datasets without gold labels simply cannot be scored.
    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        let path = dir.join(BASELINES_FILE);
        let baselines = BaselineSet::from_json(&read(&path)?).map_err(|e| EvalError::Io {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let mut gold = BTreeMap::new();
        for info in &BENCHMARK_DATASETS {
            let path = dir.join(GOLD_DIR).join(format!("{}.tsv", info.id));
            if !path.exists() {
                continue;
            }
            let file = GoldFile::parse(&read(&path)?).map_err(|e| EvalError::Io {
                path: path.clone(),
                message: e.to_string(),
            })?;
            gold.insert(info.id.to_string(), file);
        }
        let bench = Self { gold, baselines };
        bench.check()?;
        Ok(bench)
    }

    /// Every gold file must belong to a known dataset with a matching metric.
    pub fn check(&self) -> Result<(), EvalError> {
        for (id, g) in &self.gold {
            let info = dataset_info(id).ok_or_else(|| EvalError::UnknownDataset(id.clone()))?;
            if g.dataset_id != *id
                || g.metric_kind != info.metric_kind
                || g.task_kind != info.task_kind
            {
                return Err(EvalError::GoldMismatch(id.clone()));
            }
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Values a submitter computed themselves, checked against the server's.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Declared {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<DeclaredPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclaredPoint {
    pub dataset_id: String,
    #[serde(default)]
    pub operating_point: Option<String>,
    #[serde(default)]
    pub flops: Option<f64>,
    #[serde(default)]
    pub perf: Option<f64>,
}

/// Relative disagreement above which a declared value is flagged.
pub const DECLARED_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub model_name: String,
    pub spec: ModelSpec,
    pub files: Vec<SubmissionFile>,
    pub declared: Declared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Computed from uploaded traces.
    Verified,
    /// Points and parameter count supplied directly.
    Reported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operating_point: Option<String>,
    pub flops: f64,
    pub perf: f64,
    /// Baseline performance at `flops`.
    pub baseline: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flops_summary: Option<FlopsSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub score: f64,
    pub points: Vec<ScoredPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Flag {
    Partial {
        missing: Vec<String>,
    },
    Extrapolated {
        dataset: String,
        operating_point: Option<String>,
        side: Clamp,
    },
    DeclaredMismatch {
        field: String,
        declared: f64,
        computed: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSubmission {
    pub model_name: String,
    pub source: Source,
    pub convention_version: String,
    /// Backbone parameters; this is what track assignment uses.
    pub params: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_with_exits: Option<u64>,
    pub track: Option<Track>,
    pub datasets: BTreeMap<String, DatasetResult>,
    pub overall: Overall,
    /// Mean over scored datasets of the best performance among their
    /// operating points. Track boards rank by this.
    pub average_performance: f64,
    pub flags: Vec<Flag>,
}

impl ScoredSubmission {
    pub fn is_partial(&self) -> bool {
        matches!(self.overall, Overall::Partial { .. })
    }

    /// Per-dataset score map, as fed into the overall average.
    pub fn dataset_scores(&self) -> BTreeMap<String, f64> {
        self.datasets
            .iter()
            .map(|(k, v)| (k.clone(), v.score))
            .collect()
    }
}

/// Scores a trace-backed submission.
pub fn evaluate(sub: &Submission, bench: &Benchmark) -> Result<ScoredSubmission, EvalError> {
    sub.spec.validate()?;
    if sub.files.is_empty() {
        return Err(EvalError::NoFiles);
    }
    let params = count_params(&sub.spec)?;
    let mut per_dataset: BTreeMap<String, Vec<(PerfPoint, ScoredPoint)>> = BTreeMap::new();

    for file in &sub.files {
        let ds = &file.dataset_id;
        dataset_info(ds).ok_or_else(|| EvalError::UnknownDataset(ds.clone()))?;
        let gold = bench
            .gold
            .get(ds)
            .ok_or_else(|| EvalError::NoGold(ds.clone()))?;
        let summary = submission_flops(file, &sub.spec).map_err(|source| EvalError::Trace {
            dataset: ds.clone(),
            source,
        })?;
        let perf = dataset_metric(gold, &file.preds()).map_err(|source| EvalError::Metric {
            dataset: ds.clone(),
            source,
        })?;
        let point = PerfPoint::new(summary.mean, perf).map_err(|source| EvalError::Scoring {
            dataset: ds.clone(),
            source,
        })?;
        let entry = per_dataset.entry(ds.clone()).or_default();
        if entry
            .iter()
            .any(|(_, p)| p.operating_point == file.operating_point)
        {
            return Err(EvalError::DuplicatePoint {
                dataset: ds.clone(),
                label: file.operating_point.clone().unwrap_or_default(),
            });
        }
        entry.push((
            point,
            ScoredPoint {
                operating_point: file.operating_point.clone(),
                flops: point.flops,
                perf,
                baseline: 0.0,
                flops_summary: Some(summary),
            },
        ));
    }

    let mut scored = assemble(
        sub.model_name.clone(),
        Source::Verified,
        params.backbone,
        Some(params.total()),
        per_dataset,
        bench,
    )?;
    check_declared(&sub.declared, params.backbone, &mut scored);
    Ok(scored)
}

/// A leaderboard entry taken from a publication: points and parameters as reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportedEntry {
    pub model_name: String,
    pub params: u64,
    pub points: BTreeMap<String, Vec<PerfPoint>>,
}

pub fn evaluate_reported(
    entry: &ReportedEntry,
    bench: &Benchmark,
) -> Result<ScoredSubmission, EvalError> {
    if entry.points.values().all(Vec::is_empty) {
        return Err(EvalError::NoFiles);
    }
    let mut per_dataset = BTreeMap::new();
    for (ds, points) in &entry.points {
        dataset_info(ds).ok_or_else(|| EvalError::UnknownDataset(ds.clone()))?;
        if points.is_empty() {
            continue;
        }
        let rows = points
            .iter()
            .map(|&p| {
                PerfPoint::new(p.flops, p.perf)
                    .map(|p| {
                        (
                            p,
                            ScoredPoint {
                                operating_point: None,
                                flops: p.flops,
                                perf: p.perf,
                                baseline: 0.0,
                                flops_summary: None,
                            },
                        )
                    })
                    .map_err(|source| EvalError::Scoring {
                        dataset: ds.clone(),
                        source,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        per_dataset.insert(ds.clone(), rows);
    }
    assemble(
        entry.model_name.clone(),
        Source::Reported,
        entry.params,
        None,
        per_dataset,
        bench,
    )
}

fn assemble(
    model_name: String,
    source: Source,
    params: u64,
    params_with_exits: Option<u64>,
    per_dataset: BTreeMap<String, Vec<(PerfPoint, ScoredPoint)>>,
    bench: &Benchmark,
) -> Result<ScoredSubmission, EvalError> {
    let mut datasets = BTreeMap::new();
    let mut flags = Vec::new();
    let mut best_sum = 0.0;
    for (ds, rows) in per_dataset {
        let curve = bench
            .baselines
            .get(&ds)
            .ok_or_else(|| EvalError::NoBaseline(ds.clone()))?;
        let points: Vec<PerfPoint> = rows.iter().map(|(p, _)| *p).collect();
        let score = elue_score_dataset(&points, curve)
            .map_err(|source| EvalError::Scoring {
                dataset: ds.clone(),
                source,
            })?
            .score;
        let mut scored_points = Vec::with_capacity(rows.len());
        for (p, mut sp) in rows {
            let at = interpolate(curve, p.flops);
            sp.baseline = at.perf;
            if let Some(side) = at.clamped {
                flags.push(Flag::Extrapolated {
                    dataset: ds.clone(),
                    operating_point: sp.operating_point.clone(),
                    side,
                });
            }
            scored_points.push(sp);
        }
        best_sum += points
            .iter()
            .map(|p| p.perf)
            .fold(f64::NEG_INFINITY, f64::max);
        datasets.insert(
            ds,
            DatasetResult {
                score,
                points: scored_points,
            },
        );
    }
    let scores: BTreeMap<String, f64> =
        datasets.iter().map(|(k, v)| (k.clone(), v.score)).collect();
    let overall = elue_score_overall(&scores, &dataset_ids());
    if let Overall::Partial { missing } = &overall {
        flags.insert(
            0,
            Flag::Partial {
                missing: missing.clone(),
            },
        );
    }
    Ok(ScoredSubmission {
        model_name,
        source,
        convention_version: CONVENTION_VERSION.to_string(),
        params,
        params_with_exits,
        track: assign_track(params),
        average_performance: best_sum / datasets.len() as f64,
        datasets,
        overall,
        flags,
    })
}

fn disagrees(declared: f64, computed: f64) -> bool {
    (declared - computed).abs() > DECLARED_TOLERANCE * computed.abs()
}

fn check_declared(declared: &Declared, params: u64, scored: &mut ScoredSubmission) {
    if let Some(d) = declared.params {
        if disagrees(d as f64, params as f64) {
            scored.flags.push(Flag::DeclaredMismatch {
                field: "params".into(),
                declared: d as f64,
                computed: params as f64,
            });
        }
    }
    for dp in &declared.points {
        let Some(point) = scored.datasets.get(&dp.dataset_id).and_then(|r| {
            r.points
                .iter()
                .find(|p| p.operating_point == dp.operating_point)
        }) else {
            continue;
        };
        let label = match &dp.operating_point {
            Some(op) => format!("{}@{op}", dp.dataset_id),
            None => dp.dataset_id.clone(),
        };
        let checks = [
            ("flops", dp.flops, point.flops),
            ("perf", dp.perf, point.perf),
        ];
        for (what, d, c) in checks {
            if let Some(d) = d.filter(|&d| disagrees(d, c)) {
                scored.flags.push(Flag::DeclaredMismatch {
                    field: format!("{label}.{what}"),
                    declared: d,
                    computed: c,
                });
            }
        }
    }
}
