use std::fmt::Write;

use exitbench_core::evaluate::{Flag, ScoredSubmission};
use exitbench_core::scoring::{Overall, PerfPoint};
use exitbench_core::trace::FlopsSummary;
use exitbench_core::trainer::TrainReport;
use exitbench_service::{Board, BoardEntry, Store};
use serde::Serialize;

use crate::TrainSummary;

#[derive(Debug, Serialize)]
pub struct FlopsRow {
    pub file: String,
    pub summary: FlopsSummary,
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub policy: String,
    pub flops: f64,
    pub perf: f64,
    pub mean_exit_layer: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
}

/// Left-aligned columns separated by two spaces.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let text: Vec<String> = cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(text.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// FLOPs in millions, one decimal.
fn mflops(f: f64) -> String {
    format!("{:.1}M", f / 1e6)
}

/// Two decimals, never printing `-0.00`.
fn two(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

pub fn flops(rows: &[FlopsRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                r.file.clone(),
                s.rows.to_string(),
                mflops(s.mean),
                mflops(s.p50 as f64),
                mflops(s.p90 as f64),
                mflops(s.p99 as f64),
                mflops(s.min as f64),
                mflops(s.max as f64),
            ]
        })
        .collect();
    table(
        &["file", "rows", "mean", "p50", "p90", "p99", "min", "max"],
        &body,
    )
}

pub fn score(s: &ScoredSubmission) -> String {
    let mut out = String::new();
    let source = serde_json::to_value(s.source).expect("source serializes");
    writeln!(
        out,
        "model        {} ({})",
        s.model_name,
        source.as_str().unwrap_or_default()
    )
    .unwrap();
    writeln!(
        out,
        "params       {} (track {})",
        thousands(s.params),
        s.track.map_or("none".to_string(), |t| t.to_string())
    )
    .unwrap();
    writeln!(out, "convention   {}", s.convention_version).unwrap();
    out.push('\n');
    let mut rows = Vec::new();
    for (ds, r) in &s.datasets {
        for p in &r.points {
            rows.push(vec![
                ds.clone(),
                p.operating_point.clone().unwrap_or_else(|| "-".into()),
                mflops(p.flops),
                two(p.perf),
                two(p.baseline),
                two(p.perf - p.baseline),
            ]);
        }
        rows.push(vec![
            ds.clone(),
            "score".into(),
            String::new(),
            String::new(),
            String::new(),
            two(r.score),
        ]);
    }
    out.push_str(&table(
        &["dataset", "point", "flops", "perf", "baseline", "delta"],
        &rows,
    ));
    out.push('\n');
    match &s.overall {
        Overall::Complete(v) => writeln!(out, "overall      {}", two(*v)).unwrap(),
        Overall::Partial { missing } => writeln!(
            out,
            "overall      - (partial; missing {})",
            missing.join(", ")
        )
        .unwrap(),
    }
    let notes: Vec<String> = s
        .flags
        .iter()
        .filter_map(|f| match f {
            Flag::Partial { .. } => None,
            Flag::Extrapolated {
                dataset,
                operating_point,
                side,
            } => Some(format!(
                "{dataset}{}: outside the baseline curve ({}), clamped",
                operating_point
                    .as_ref()
                    .map(|o| format!("@{o}"))
                    .unwrap_or_default(),
                format!("{side:?}").to_lowercase()
            )),
            Flag::DeclaredMismatch {
                field,
                declared,
                computed,
            } => Some(format!(
                "{field}: declared {declared} but computed {computed}"
            )),
        })
        .collect();
    for n in notes {
        writeln!(out, "flag         {n}").unwrap();
    }
    out
}

pub fn score_plot(s: &ScoredSubmission) -> String {
    let mut out = String::from("dataset\tflops\tperf\tbaseline\n");
    for (ds, r) in &s.datasets {
        for p in &r.points {
            writeln!(out, "{ds}\t{}\t{}\t{}", p.flops, p.perf, p.baseline).unwrap();
        }
    }
    out
}

pub fn sweep(dataset: &str, rows: &[SweepRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.policy.clone(),
                mflops(r.flops),
                format!("{:.4}", r.perf),
                format!("{:.3}", r.mean_exit_layer),
            ];
            if let Some(f) = &r.trace_file {
                v.push(f.clone());
            }
            v
        })
        .collect();
    let header: &[&str] = if rows.iter().any(|r| r.trace_file.is_some()) {
        &["policy", "flops", "perf", "mean_exit", "trace"]
    } else {
        &["policy", "flops", "perf", "mean_exit"]
    };
    format!("dataset {dataset}\n{}", table(header, &body))
}

pub fn sweep_plot(rows: &[SweepRow]) -> String {
    let mut out = String::from("policy\tflops\tperf\tmean_exit_layer\n");
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.policy, r.flops, r.perf, r.mean_exit_layer
        )
        .unwrap();
    }
    out
}

pub fn points(points: &[PerfPoint]) -> String {
    let mut out = String::from("flops\tperf\n");
    for p in points {
        writeln!(out, "{}\t{}", p.flops, p.perf).unwrap();
    }
    out
}

fn board_rows(entries: &[BoardEntry], by_score: bool) -> Vec<Vec<String>> {
    entries
        .iter()
        .map(|e| {
            let source = serde_json::to_value(e.source).expect("source serializes");
            vec![
                e.rank.map_or("-".into(), |r| r.to_string()),
                e.model_name.clone(),
                e.submitter.clone(),
                source.as_str().unwrap_or_default().to_string(),
                thousands(e.params),
                if by_score {
                    e.score.map_or("-".into(), two)
                } else {
                    two(e.average_performance)
                },
                e.datasets.to_string(),
                e.id[..12.min(e.id.len())].to_string(),
            ]
        })
        .collect()
}

pub fn board(b: &Board) -> String {
    let by_score = b.track.is_none();
    let title = match b.track {
        None => "main board (overall score)".to_string(),
        Some(t) => format!("track {t} (average performance)"),
    };
    let key = if by_score { "score" } else { "avg_perf" };
    let header = [
        "rank",
        "model",
        "submitter",
        "source",
        "params",
        key,
        "datasets",
        "id",
    ];
    let mut out = format!("{title}\n");
    out.push_str(&table(&header, &board_rows(&b.ranked, by_score)));
    if !b.unranked.is_empty() {
        out.push_str("\nunranked (partial)\n");
        out.push_str(&table(&header, &board_rows(&b.unranked, by_score)));
    }
    out
}

/// One row per (series, dataset, point): the baseline curves, then every
/// ranked entry's operating points.
pub fn board_plot(b: &Board, store: &Store) -> String {
    let mut out = String::from("series\tdataset\tflops\tperf\n");
    for (ds, curve) in &store.benchmark().baselines.curves {
        for k in curve.knots() {
            writeln!(out, "baseline\t{ds}\t{}\t{}", k.flops, k.perf).unwrap();
        }
    }
    for e in &b.ranked {
        let Some(rec) = store.get(&e.id) else {
            continue;
        };
        for (ds, r) in &rec.scored.datasets {
            for p in &r.points {
                writeln!(out, "{}\t{ds}\t{}\t{}", e.model_name, p.flops, p.perf).unwrap();
            }
        }
    }
    out
}

pub fn history(report: &TrainReport) -> String {
    let exits = report.history.first().map_or(0, |r| r.exit_losses.len());
    let mut out = String::from("epoch");
    for l in 1..=exits {
        write!(out, "\texit_{l}").unwrap();
    }
    out.push('\n');
    for r in &report.history {
        write!(out, "{}", r.epoch).unwrap();
        for v in &r.exit_losses {
            write!(out, "\t{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn train(s: &TrainSummary) -> String {
    let mut out = format!("epochs {}  steps {}\n", s.epochs, s.steps);
    let rows: Vec<Vec<String>> = (0..s.final_exit_losses.len())
        .map(|l| {
            vec![
                (l + 1).to_string(),
                format!("{:.4}", s.final_exit_losses[l]),
                format!("{:.2}", 100.0 * s.train_accuracy[l]),
                format!("{:.2}", 100.0 * s.test_accuracy[l]),
            ]
        })
        .collect();
    out.push_str(&table(&["exit", "loss", "train_acc", "test_acc"], &rows));
    for w in &s.written {
        writeln!(out, "wrote {w}").unwrap();
    }
    out
}
