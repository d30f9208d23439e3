//! Baseline performance-FLOPs curves, the ELUE score, Pareto frontiers and
//! parameter-budget tracks.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("invalid point (flops {flops}, perf {perf}): flops must be positive and both finite")]
    InvalidPoint { flops: f64, perf: f64 },
    #[error("baseline curve for `{0}` needs at least 2 points")]
    TooFewKnots(String),
    #[error("baseline curve for `{dataset}` has two knots at flops {flops}")]
    DuplicateFlops { dataset: String, flops: f64 },
    #[error("no operating points to score")]
    NoPoints,
    #[error("baseline file: {0}")]
    Schema(String),
}

/// One operating point: mean FLOPs per sample and performance on a 0–100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfPoint {
    pub flops: f64,
    pub perf: f64,
}

impl PerfPoint {
    pub fn new(flops: f64, perf: f64) -> Result<Self, ScoringError> {
        if !(flops.is_finite() && flops > 0.0 && perf.is_finite()) {
            return Err(ScoringError::InvalidPoint { flops, perf });
        }
        Ok(Self { flops, perf })
    }

    /// `self` dominates `other`: no more FLOPs, no less performance, one strictly.
    pub fn dominates(&self, other: &PerfPoint) -> bool {
        self.flops <= other.flops
            && self.perf >= other.perf
            && (self.flops < other.flops || self.perf > other.perf)
    }
}

/// Piecewise-linear baseline `p(f)` for one dataset, knots strictly increasing in FLOPs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineCurve {
    dataset_id: String,
    knots: Vec<PerfPoint>,
}

impl BaselineCurve {
    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn knots(&self) -> &[PerfPoint] {
        &self.knots
    }
}

pub fn build_baseline_curve(
    points: &[PerfPoint],
    dataset_id: &str,
) -> Result<BaselineCurve, ScoringError> {
    for p in points {
        PerfPoint::new(p.flops, p.perf)?;
    }
    if points.len() < 2 {
        return Err(ScoringError::TooFewKnots(dataset_id.to_string()));
    }
    let mut knots = points.to_vec();
    knots.sort_by(|a, b| a.flops.total_cmp(&b.flops));
    if let Some(w) = knots.windows(2).find(|w| w[0].flops == w[1].flops) {
        return Err(ScoringError::DuplicateFlops {
            dataset: dataset_id.to_string(),
            flops: w[0].flops,
        });
    }
    Ok(BaselineCurve {
        dataset_id: dataset_id.to_string(),
        knots,
    })
}

/// Which side of the measured range a query fell on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    Below,
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interpolated {
    pub perf: f64,
    pub clamped: Option<Clamp>,
}

/// Baseline performance at `flops`. Outside the knot range the nearest
/// endpoint's value is returned and `clamped` is set.
pub fn interpolate(curve: &BaselineCurve, flops: f64) -> Interpolated {
    let knots = &curve.knots;
    let (first, last) = (knots[0], knots[knots.len() - 1]);
    if flops <= first.flops {
        let clamped = (flops < first.flops).then_some(Clamp::Below);
        return Interpolated {
            perf: first.perf,
            clamped,
        };
    }
    if flops >= last.flops {
        let clamped = (flops > last.flops).then_some(Clamp::Above);
        return Interpolated {
            perf: last.perf,
            clamped,
        };
    }
    // first knot with flops > query; 1 <= hi <= len-1
    let hi = knots.partition_point(|k| k.flops <= flops);
    let (a, b) = (knots[hi - 1], knots[hi]);
    if a.flops == flops {
        return Interpolated {
            perf: a.perf,
            clamped: None,
        };
    }
    let t = (flops - a.flops) / (b.flops - a.flops);
    let perf = (a.perf + t * (b.perf - a.perf)).clamp(a.perf.min(b.perf), a.perf.max(b.perf));
    Interpolated {
        perf,
        clamped: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub score: f64,
    /// Points whose baseline value came from endpoint clamping.
    pub clamped_points: usize,
}

/// Mean gap between each point's performance and the baseline at its FLOPs.
pub fn elue_score_dataset(
    points: &[PerfPoint],
    curve: &BaselineCurve,
) -> Result<DatasetScore, ScoringError> {
    if points.is_empty() {
        return Err(ScoringError::NoPoints);
    }
    let mut total = 0.0;
    let mut clamped_points = 0;
    for p in points {
        let base = interpolate(curve, p.flops);
        if base.clamped.is_some() {
            clamped_points += 1;
        }
        total += p.perf - base.perf;
    }
    Ok(DatasetScore {
        score: total / points.len() as f64,
        clamped_points,
    })
}

/// Overall score, or the list of benchmark datasets that were not scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overall {
    Complete(f64),
    Partial { missing: Vec<String> },
}

impl Overall {
    pub fn value(&self) -> Option<f64> {
        match self {
            Overall::Complete(v) => Some(*v),
            Overall::Partial { .. } => None,
        }
    }
}

/// Unweighted mean over exactly `datasets`; partial when any is missing.
pub fn elue_score_overall(per_dataset: &BTreeMap<String, f64>, datasets: &[&str]) -> Overall {
    let missing: Vec<String> = datasets
        .iter()
        .filter(|d| !per_dataset.contains_key(**d))
        .map(|d| d.to_string())
        .collect();
    if !missing.is_empty() {
        return Overall::Partial { missing };
    }
    let sum: f64 = datasets.iter().map(|d| per_dataset[*d]).sum();
    Overall::Complete(sum / datasets.len() as f64)
}

/// Indices of the non-dominated points, sorted by FLOPs. Exact duplicates
/// keep their first occurrence.
pub fn pareto_indices(points: &[PerfPoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    // stable: equal (f, p) stay in input order
    order.sort_by(|&a, &b| {
        points[a]
            .flops
            .total_cmp(&points[b].flops)
            .then(points[b].perf.total_cmp(&points[a].perf))
    });
    let mut frontier = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for i in order {
        if points[i].perf > best {
            best = points[i].perf;
            frontier.push(i);
        }
    }
    frontier
}

pub fn pareto_frontier(points: &[PerfPoint]) -> Vec<PerfPoint> {
    pareto_indices(points)
        .into_iter()
        .map(|i| points[i])
        .collect()
}

/// Parameter-budget leaderboard tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Track {
    #[serde(rename = "40M")]
    Below40M,
    #[serde(rename = "55M")]
    Below55M,
    #[serde(rename = "70M")]
    Below70M,
    #[serde(rename = "110M")]
    Below110M,
}

impl Track {
    pub const ALL: [Track; 4] = [
        Track::Below40M,
        Track::Below55M,
        Track::Below70M,
        Track::Below110M,
    ];

    pub fn threshold(self) -> u64 {
        match self {
            Track::Below40M => 40_000_000,
            Track::Below55M => 55_000_000,
            Track::Below70M => 70_000_000,
            Track::Below110M => 110_000_000,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Track::Below40M => "40M",
            Track::Below55M => "55M",
            Track::Below70M => "70M",
            Track::Below110M => "110M",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.id().eq_ignore_ascii_case(id))
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Smallest track whose threshold is strictly above `params`.
pub fn assign_track(params: u64) -> Option<Track> {
    Track::ALL.into_iter().find(|t| params < t.threshold())
}

#[derive(Debug, Deserialize, Serialize)]
struct CurveRecord {
    dataset_id: String,
    knots: Vec<PerfPoint>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CurveFile {
    curves: Vec<CurveRecord>,
}

/// Baseline curves keyed by dataset id.
///
/// File form: `{"curves": [{"dataset_id": "...", "knots": [{"flops": f, "perf": p}, ...]}]}`
/// with FLOPs in raw units and performance on a 0–100 scale.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaselineSet {
    pub curves: BTreeMap<String, BaselineCurve>,
}

impl BaselineSet {
    pub fn from_json(text: &str) -> Result<Self, ScoringError> {
        let file: CurveFile =
            serde_json::from_str(text).map_err(|e| ScoringError::Schema(e.to_string()))?;
        let mut curves = BTreeMap::new();
        for rec in file.curves {
            let curve = build_baseline_curve(&rec.knots, &rec.dataset_id)?;
            if curves.insert(rec.dataset_id.clone(), curve).is_some() {
                return Err(ScoringError::Schema(format!(
                    "duplicate curve for `{}`",
                    rec.dataset_id
                )));
            }
        }
        Ok(Self { curves })
    }

    pub fn to_json(&self) -> String {
        let file = CurveFile {
            curves: self
                .curves
                .values()
                .map(|c| CurveRecord {
                    dataset_id: c.dataset_id.clone(),
                    knots: c.knots.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("curves serialize");
        s.push('\n');
        s
    }

    pub fn get(&self, dataset_id: &str) -> Option<&BaselineCurve> {
        self.curves.get(dataset_id)
    }
}
