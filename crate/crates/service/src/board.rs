use std::cmp::Ordering;

use exitbench_core::evaluate::Source;
use exitbench_core::scoring::Track;
use serde::{Deserialize, Serialize};

use crate::store::SubmissionRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardEntry {
    /// 1-based; absent for unranked (partial) entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub id: String,
    pub model_name: String,
    pub submitter: String,
    pub source: Source,
    pub params: u64,
    pub track: Option<Track>,
    /// Overall score; `None` for partial submissions.
    pub score: Option<f64>,
    pub average_performance: f64,
    pub datasets: usize,
    pub submitted_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Board {
    pub track: Option<Track>,
    /// What `ranked` is ordered by.
    pub ranked_by: String,
    pub ranked: Vec<BoardEntry>,
    pub unranked: Vec<BoardEntry>,
}

fn entry(r: &SubmissionRecord) -> BoardEntry {
    BoardEntry {
        rank: None,
        id: r.id.clone(),
        model_name: r.scored.model_name.clone(),
        submitter: r.submitter.clone(),
        source: r.scored.source,
        params: r.scored.params,
        track: r.scored.track,
        score: r.scored.overall.value(),
        average_performance: r.scored.average_performance,
        datasets: r.scored.datasets.len(),
        submitted_at_ms: r.submitted_at_ms,
    }
}

fn arrival(a: &BoardEntry, b: &BoardEntry) -> Ordering {
    a.submitted_at_ms
        .cmp(&b.submitted_at_ms)
        .then_with(|| a.id.cmp(&b.id))
}

/// The main board (`track = None`) ranks complete submissions by overall
/// score; a track board keeps submissions assigned to that track and ranks
/// them by average performance. Partial submissions are listed unranked.
/// Ties fall back to submission time, then id.
pub fn leaderboard<'a>(
    records: impl IntoIterator<Item = &'a SubmissionRecord>,
    track: Option<Track>,
) -> Board {
    let (mut ranked, mut unranked): (Vec<BoardEntry>, Vec<BoardEntry>) = records
        .into_iter()
        .filter(|r| track.is_none() || r.scored.track == track)
        .map(entry)
        .partition(|e| e.score.is_some());
    let key = |e: &BoardEntry| match track {
        None => e.score.unwrap_or(f64::NEG_INFINITY),
        Some(_) => e.average_performance,
    };
    ranked.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| arrival(a, b)));
    for (i, e) in ranked.iter_mut().enumerate() {
        e.rank = Some(i + 1);
    }
    unranked.sort_by(arrival);
    Board {
        track,
        ranked_by: match track {
            None => "overall_score".into(),
            Some(_) => "average_performance".into(),
        },
        ranked,
        unranked,
    }
}
