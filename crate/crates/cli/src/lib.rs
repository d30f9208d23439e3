//! `exitbench` command-line interface.

mod error;
mod render;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use exitbench_core::cost::{count_params, ModelSpec, CONVENTION_VERSION};
use exitbench_core::evaluate::{
    evaluate, evaluate_reported, Benchmark, Declared, ReportedEntry, Submission,
};
use exitbench_core::exitsim::{sweep_policy, ExitPolicy, LogitsFile};
use exitbench_core::metrics::{GoldFile, TaskKind};
use exitbench_core::scoring::{assign_track, pareto_frontier, PerfPoint, Track};
use exitbench_core::trace::{parse_trace_file, serialize_trace, submission_flops};
use exitbench_core::trainer::{
    exit_accuracies, export_logits, init_network, train, SyntheticConfig, SyntheticDataset,
    TrainConfig,
};
use exitbench_service::{leaderboard, Store};
use serde::{Deserialize, Serialize};

pub use error::{exit, CliError};

/// Environment variable naming the benchmark data directory.
pub const DATA_DIR_ENV: &str = "ELUE_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Aligned tables.
    Human,
    /// Pretty JSON; byte-identical for identical inputs.
    Json,
    /// Tab-separated columns for plotting (frontier, simulate, leaderboard).
    Plot,
}

#[derive(Debug, Parser)]
#[command(
    name = "exitbench",
    version,
    about = "Efficiency benchmarking for early-exit models"
)]
pub struct Cli {
    /// Output format. Default: human.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Benchmark data directory holding baselines.json and gold/<dataset>.tsv.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    /// JSON settings file (data_dir, format, store, addr). Flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean and percentile FLOPs per sample of trace files.
    Flops {
        #[arg(long)]
        spec: PathBuf,
        /// Trace file; repeatable.
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
    },
    /// Parameter counts and leaderboard track.
    Params {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Score a submission against the benchmark data.
    Score {
        #[arg(long, required_unless_present = "reported")]
        spec: Option<PathBuf>,
        /// `DATASET[@OPERATING_POINT]=PATH`; repeatable.
        #[arg(long = "trace", value_parser = parse_trace_arg)]
        traces: Vec<TraceArg>,
        /// Self-reported params/points to cross-check (JSON).
        #[arg(long)]
        declared: Option<PathBuf>,
        #[arg(long)]
        model_name: Option<String>,
        /// Score reported points (JSON) instead of traces.
        #[arg(long, conflicts_with_all = ["spec", "traces", "declared"])]
        reported: Option<PathBuf>,
    },
    /// Pareto frontier of (flops, perf) points.
    Frontier {
        /// JSON list of {"flops","perf"} or two whitespace-separated columns.
        #[arg(long)]
        points: PathBuf,
    },
    /// Sweep an exit policy over per-exit logits and cost the result.
    Simulate {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum)]
        policy: PolicyKind,
        /// Comma-separated thresholds (entropy) or patience values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// Agreement tolerance for patience on regression outputs.
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
        /// Sequence length for records that carry none.
        #[arg(long, default_value_t = 128)]
        default_seq_len: u64,
        /// Write one trace file per grid value into this directory.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Train the reference multi-exit network on synthetic data.
    Train {
        /// JSON with "model" (training config) and "data" (synthetic data config).
        #[arg(long)]
        train_config: PathBuf,
        #[arg(long)]
        model_out: Option<PathBuf>,
        /// Per-epoch per-exit losses as TSV.
        #[arg(long)]
        history_out: Option<PathBuf>,
        #[arg(long)]
        logits_out: Option<PathBuf>,
        #[arg(long)]
        gold_out: Option<PathBuf>,
        /// Split used for the logits and gold exports.
        #[arg(long, value_enum, default_value_t = SplitKind::Test)]
        split: SplitKind,
        /// dataset_id written into the exported gold file.
        #[arg(long, default_value = "synthetic")]
        dataset_id: String,
    },
    /// Ranked leaderboard from a submission store.
    Leaderboard {
        #[arg(long)]
        store: Option<PathBuf>,
        /// 40M, 55M, 70M or 110M; omit for the main board.
        #[arg(long)]
        track: Option<String>,
    },
    /// Run the submission service.
    Serve {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        addr: Option<SocketAddr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Entropy,
    Patience,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitKind {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceArg {
    pub dataset_id: String,
    pub operating_point: Option<String>,
    pub path: PathBuf,
}

fn parse_trace_arg(s: &str) -> Result<TraceArg, String> {
    let (target, path) = s
        .split_once('=')
        .filter(|(t, p)| !t.is_empty() && !p.is_empty())
        .ok_or_else(|| format!("expected DATASET[@OPERATING_POINT]=PATH, got `{s}`"))?;
    let (dataset_id, operating_point) = match target.split_once('@') {
        Some((d, op)) => (d.to_string(), Some(op.to_string())),
        None => (target.to_string(), None),
    };
    Ok(TraceArg {
        dataset_id,
        operating_point,
        path: PathBuf::from(path),
    })
}

/// Settings file contents; every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSettings {
    data_dir: Option<PathBuf>,
    format: Option<Format>,
    store: Option<PathBuf>,
    addr: Option<SocketAddr>,
}

/// Effective settings after merging flags, environment and the settings file.
#[derive(Debug)]
pub struct Settings {
    pub format: Format,
    pub data_dir: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub addr: Option<SocketAddr>,
}

impl Settings {
    fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let file = match &cli.config {
            None => FileSettings::default(),
            Some(path) => {
                let mut s: FileSettings = serde_json::from_str(&read(path)?).map_err(|e| {
                    CliError::new(
                        "config_error",
                        exit::PARSE,
                        format!("{}: {e}", path.display()),
                    )
                })?;
                // paths in the settings file are relative to the file
                let base = path.parent().unwrap_or(Path::new("."));
                s.data_dir = s.data_dir.map(|p| base.join(p));
                s.store = s.store.map(|p| base.join(p));
                s
            }
        };
        let (store, addr) = match &cli.command {
            Command::Leaderboard { store, .. } => (store.clone(), None),
            Command::Serve { store, addr } => (store.clone(), *addr),
            _ => (None, None),
        };
        Ok(Self {
            format: cli.format.or(file.format).unwrap_or(Format::Human),
            data_dir: cli.data_dir.clone().or(file.data_dir),
            store: store.or(file.store),
            addr: addr.or(file.addr),
        })
    }

    fn benchmark(&self) -> Result<Benchmark, CliError> {
        let dir = self.data_dir.as_ref().ok_or_else(|| {
            CliError::invalid(
                "missing_data_dir",
                format!("no benchmark data directory; pass --data-dir or set {DATA_DIR_ENV}"),
            )
        })?;
        Ok(Benchmark::load(dir)?)
    }

    fn store_dir(&self) -> Result<&Path, CliError> {
        self.store
            .as_deref()
            .ok_or_else(|| CliError::invalid("missing_store", "no store directory; pass --store"))
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_spec(path: &Path) -> Result<ModelSpec, CliError> {
    Ok(ModelSpec::from_json(&read(path)?)?)
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn unsupported(format: Format) -> CliError {
    CliError::invalid(
        "unsupported_format",
        format!("this command has no {format:?} output"),
    )
}

/// Runs one command and returns what it prints on stdout. `serve` blocks.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let settings = Settings::resolve(&cli)?;
    let fmt = settings.format;
    match cli.command {
        Command::Flops { spec, traces } => cmd_flops(fmt, &spec, &traces),
        Command::Params { spec } => cmd_params(fmt, &spec),
        Command::Score {
            spec,
            traces,
            declared,
            model_name,
            reported,
        } => {
            let bench = settings.benchmark()?;
            let scored = match reported {
                Some(path) => {
                    let entry: ReportedEntry =
                        serde_json::from_str(&read(&path)?).map_err(|e| {
                            CliError::new(
                                "schema_error",
                                exit::PARSE,
                                format!("{}: {e}", path.display()),
                            )
                        })?;
                    evaluate_reported(&entry, &bench)?
                }
                None => {
                    let spec = load_spec(spec.as_deref().expect("clap enforces --spec"))?;
                    evaluate(
                        &load_submission(spec, &traces, declared.as_deref(), model_name)?,
                        &bench,
                    )?
                }
            };
            match fmt {
                Format::Json => Ok(json(&scored)),
                Format::Human => Ok(render::score(&scored)),
                Format::Plot => Ok(render::score_plot(&scored)),
            }
        }
        Command::Frontier { points } => cmd_frontier(fmt, &points),
        Command::Simulate {
            logits,
            spec,
            gold,
            policy,
            grid,
            tau,
            default_seq_len,
            emit,
        } => {
            let spec = load_spec(&spec)?;
            let logits = LogitsFile::parse(&read(&logits)?)?;
            let gold = GoldFile::parse(&read(&gold)?)?;
            let grid = policy_grid(policy, &grid, tau, gold.task_kind)?;
            let cells = sweep_policy(
                &logits.samples,
                &spec,
                &logits.seq_lens(default_seq_len),
                &gold,
                &grid,
            )?;
            let mut rows = Vec::with_capacity(cells.len());
            for cell in &cells {
                let label = cell.policy.label();
                let file = match &emit {
                    Some(dir) => {
                        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                        let path = dir.join(format!("{}.{label}.tsv", gold.dataset_id));
                        write(&path, &serialize_trace(&cell.submission))?;
                        Some(path.display().to_string())
                    }
                    None => None,
                };
                rows.push(render::SweepRow {
                    policy: label,
                    flops: cell.point.flops,
                    perf: cell.point.perf,
                    mean_exit_layer: cell.mean_exit_layer(),
                    trace_file: file,
                });
            }
            Ok(match fmt {
                Format::Json => json(&rows),
                Format::Human => render::sweep(&gold.dataset_id, &rows),
                Format::Plot => render::sweep_plot(&rows),
            })
        }
        Command::Train {
            train_config,
            model_out,
            history_out,
            logits_out,
            gold_out,
            split,
            dataset_id,
        } => {
            if fmt == Format::Plot {
                return Err(unsupported(fmt));
            }
            cmd_train(
                fmt,
                &train_config,
                TrainOutputs {
                    model: model_out,
                    history: history_out,
                    logits: logits_out,
                    gold: gold_out,
                    split,
                    dataset_id,
                },
            )
        }
        Command::Leaderboard { track, .. } => {
            let track = match track.as_deref() {
                None => None,
                Some(t) => Some(Track::from_id(t).ok_or_else(|| {
                    CliError::invalid(
                        "unknown_track",
                        format!("unknown track `{t}`; expected 40M, 55M, 70M or 110M"),
                    )
                })?),
            };
            let store = Store::open(settings.store_dir()?, settings.benchmark()?)?;
            let board = leaderboard(store.records(), track);
            Ok(match fmt {
                Format::Json => json(&board),
                Format::Human => render::board(&board),
                Format::Plot => render::board_plot(&board, &store),
            })
        }
        Command::Serve { .. } => {
            let addr = settings
                .addr
                .unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8080)));
            let store = Store::open(settings.store_dir()?, settings.benchmark()?)?;
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| CliError::new("runtime_error", exit::SERVICE, e.to_string()))?;
            eprintln!("listening on http://{addr}");
            runtime
                .block_on(exitbench_service::serve(addr, store))
                .map_err(|e| CliError::new("serve_error", exit::SERVICE, e.to_string()))?;
            Ok(String::new())
        }
    }
}

fn cmd_flops(fmt: Format, spec: &Path, traces: &[PathBuf]) -> Result<String, CliError> {
    let spec = load_spec(spec)?;
    let mut rows = Vec::with_capacity(traces.len());
    for path in traces {
        let label = path.display().to_string();
        let sub = parse_trace_file(&label, &read(path)?)?;
        rows.push(render::FlopsRow {
            file: label,
            summary: submission_flops(&sub, &spec)?,
        });
    }
    match fmt {
        Format::Json => Ok(json(&serde_json::json!({
            "convention_version": CONVENTION_VERSION,
            "files": rows,
        }))),
        Format::Human => Ok(render::flops(&rows)),
        Format::Plot => Err(unsupported(fmt)),
    }
}

#[derive(Debug, Serialize)]
struct ParamsReport {
    model_name: String,
    backbone: u64,
    exit_heads: u64,
    total: u64,
    track: Option<Track>,
}

fn cmd_params(fmt: Format, spec: &Path) -> Result<String, CliError> {
    let spec = load_spec(spec)?;
    let p = count_params(&spec)?;
    let report = ParamsReport {
        model_name: spec.model_name.clone(),
        backbone: p.backbone,
        exit_heads: p.exit_heads,
        total: p.total(),
        track: assign_track(p.backbone),
    };
    match fmt {
        Format::Json => Ok(json(&report)),
        Format::Human => {
            Ok(format!(
            "model        {}\nbackbone     {}\nexit heads   {}\ntotal        {}\ntrack        {}\n",
            report.model_name,
            render::thousands(report.backbone),
            render::thousands(report.exit_heads),
            render::thousands(report.total),
            report.track.map_or("none (main board only)".to_string(), |t| t.to_string()),
        ))
        }
        Format::Plot => Err(unsupported(fmt)),
    }
}

fn load_submission(
    spec: ModelSpec,
    traces: &[TraceArg],
    declared: Option<&Path>,
    model_name: Option<String>,
) -> Result<Submission, CliError> {
    let mut files = Vec::with_capacity(traces.len());
    for t in traces {
        let sub = parse_trace_file(&t.dataset_id, &read(&t.path)?)
            .map_err(|e| CliError::from(e).context(&t.path))?;
        files.push(match &t.operating_point {
            Some(op) => sub.with_operating_point(op.clone()),
            None => sub,
        });
    }
    let declared = match declared {
        Some(path) => serde_json::from_str(&read(path)?).map_err(|e| {
            CliError::new(
                "schema_error",
                exit::PARSE,
                format!("{}: {e}", path.display()),
            )
        })?,
        None => Declared::default(),
    };
    Ok(Submission {
        model_name: model_name.unwrap_or_else(|| spec.model_name.clone()),
        spec,
        files,
        declared,
    })
}

fn cmd_frontier(fmt: Format, path: &Path) -> Result<String, CliError> {
    let text = read(path)?;
    let bad = |msg: String| {
        CliError::new(
            "points_parse",
            exit::PARSE,
            format!("{}: {msg}", path.display()),
        )
    };
    let points: Vec<PerfPoint> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
    } else {
        let mut pts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty()
                || cols[0].starts_with('#')
                || (i == 0 && cols[0].parse::<f64>().is_err())
            {
                continue;
            }
            let [f, p] = cols[..] else {
                return Err(bad(format!("line {}: expected two columns", i + 1)));
            };
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("line {}: `{s}` is not a number", i + 1)))
            };
            pts.push((num(f)?, num(p)?));
        }
        pts.into_iter()
            .map(|(f, p)| PerfPoint::new(f, p).map_err(|e| bad(e.to_string())))
            .collect::<Result<_, _>>()?
    };
    if points.is_empty() {
        return Err(CliError::invalid(
            "no_points",
            format!("{}: no points", path.display()),
        ));
    }
    let front = pareto_frontier(&points);
    Ok(match fmt {
        Format::Json => json(&front),
        Format::Human | Format::Plot => render::points(&front),
    })
}

fn policy_grid(
    kind: PolicyKind,
    grid: &[f64],
    tau: f64,
    task: TaskKind,
) -> Result<Vec<ExitPolicy>, CliError> {
    grid.iter()
        .map(|&v| match kind {
            PolicyKind::Entropy => Ok(ExitPolicy::Entropy { threshold: v }),
            PolicyKind::Patience => {
                if v < 1.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                    return Err(CliError::invalid(
                        "invalid_grid",
                        format!("patience `{v}` is not a positive integer"),
                    ));
                }
                let t = v as u32;
                Ok(match task {
                    TaskKind::Classification => ExitPolicy::Patience { t },
                    TaskKind::Regression => ExitPolicy::PatienceRegression { t, tau },
                })
            }
        })
        .collect()
}

/// `train --train-config` file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    model: TrainConfig,
    data: SyntheticConfig,
}

struct TrainOutputs {
    model: Option<PathBuf>,
    history: Option<PathBuf>,
    logits: Option<PathBuf>,
    gold: Option<PathBuf>,
    split: SplitKind,
    dataset_id: String,
}

#[derive(Debug, Serialize)]
pub(crate) struct TrainSummary {
    pub epochs: usize,
    pub steps: usize,
    pub final_exit_losses: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub written: Vec<String>,
}

fn cmd_train(fmt: Format, config: &Path, out: TrainOutputs) -> Result<String, CliError> {
    let file: TrainFile = serde_json::from_str(&read(config)?).map_err(|e| {
        CliError::new(
            "config_error",
            exit::PARSE,
            format!("{}: {e}", config.display()),
        )
    })?;
    let (m, d) = (&file.model, &file.data);
    if m.width != d.width || m.num_classes != d.num_classes {
        return Err(CliError::invalid(
            "invalid_training_config",
            "model and data disagree on width or num_classes",
        ));
    }
    let data = SyntheticDataset::generate(d)?;
    let mut net = init_network(m.num_layers, m.width, m.num_classes, m.seed)?;
    let report = train(&mut net, &data.train, m)?;
    let split = match out.split {
        SplitKind::Train => &data.train,
        SplitKind::Test => &data.test,
    };

    let mut written = Vec::new();
    if let Some(path) = &out.model {
        write(path, &json(&net))?;
        written.push(path.display().to_string());
    }
    if let Some(path) = &out.history {
        write(path, &render::history(&report))?;
        written.push(path.display().to_string());
    }
    if let Some(path) = &out.logits {
        write(path, &export_logits(&net, split)?.to_text())?;
        written.push(path.display().to_string());
    }
    if let Some(path) = &out.gold {
        write(
            path,
            &split.gold_file(&out.dataset_id, data.num_classes).to_text(),
        )?;
        written.push(path.display().to_string());
    }
    let summary = TrainSummary {
        epochs: report.history.len(),
        steps: report.steps,
        final_exit_losses: report
            .history
            .last()
            .map(|r| r.exit_losses.clone())
            .unwrap_or_default(),
        train_accuracy: exit_accuracies(&net, &data.train)?,
        test_accuracy: exit_accuracies(&net, &data.test)?,
        written,
    };
    Ok(match fmt {
        Format::Json => json(&summary),
        _ => render::train(&summary),
    })
}

impl CliError {
    fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}
