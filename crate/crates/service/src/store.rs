use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use exitbench_core::cost::{ModelSpec, CONVENTION_VERSION};
use exitbench_core::evaluate::{
    evaluate, evaluate_reported, Benchmark, Declared, EvalError, ReportedEntry, ScoredSubmission,
    Submission,
};
use exitbench_core::trace::{parse_trace_file, serialize_trace, TraceError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("dataset `{dataset}`: {source}")]
    Trace { dataset: String, source: TraceError },
    #[error("store I/O at {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("stored submission {id} is corrupt: {message}")]
    Corrupt { id: String, message: String },
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Eval(e) => e.code(),
            StoreError::Trace {
                source: TraceError::Empty,
                ..
            } => "empty_submission",
            StoreError::Trace { .. } => "trace_parse",
            StoreError::Io { .. } => "store_io",
            StoreError::Corrupt { .. } => "store_corrupt",
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// One uploaded trace file in canonical form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalFile {
    pub dataset_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operating_point: Option<String>,
    pub trace: String,
}

/// Everything a submission consists of. Its canonical JSON bytes are what
/// gets hashed and stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Traces {
        submitter: String,
        model_name: String,
        spec: ModelSpec,
        files: Vec<CanonicalFile>,
        #[serde(default)]
        declared: Declared,
    },
    Reported {
        submitter: String,
        entry: ReportedEntry,
    },
}

impl Payload {
    /// Parses and re-serializes every trace, and orders files by
    /// (dataset, operating point), so equivalent uploads hash equally.
    pub fn traces(
        submitter: String,
        model_name: String,
        spec: ModelSpec,
        files: Vec<CanonicalFile>,
        declared: Declared,
    ) -> Result<Self, StoreError> {
        let mut canonical = files
            .into_iter()
            .map(|f| {
                let parsed = parse_trace_file(&f.dataset_id, &f.trace).map_err(|source| {
                    StoreError::Trace {
                        dataset: f.dataset_id.clone(),
                        source,
                    }
                })?;
                Ok(CanonicalFile {
                    trace: serialize_trace(&parsed),
                    ..f
                })
            })
            .collect::<Result<Vec<_>, StoreError>>()?;
        canonical.sort_by(|a, b| {
            (&a.dataset_id, &a.operating_point).cmp(&(&b.dataset_id, &b.operating_point))
        });
        Ok(Payload::Traces {
            submitter,
            model_name,
            spec,
            files: canonical,
            declared,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("payload serializes")
    }

    pub fn id(&self) -> String {
        content_id(&self.to_bytes())
    }

    pub fn submitter(&self) -> &str {
        match self {
            Payload::Traces { submitter, .. } | Payload::Reported { submitter, .. } => submitter,
        }
    }

    pub fn evaluate(&self, bench: &Benchmark) -> Result<ScoredSubmission, StoreError> {
        match self {
            Payload::Traces {
                model_name,
                spec,
                files,
                declared,
                ..
            } => {
                let files = files
                    .iter()
                    .map(|f| {
                        let sub = parse_trace_file(&f.dataset_id, &f.trace).map_err(|source| {
                            StoreError::Trace {
                                dataset: f.dataset_id.clone(),
                                source,
                            }
                        })?;
                        Ok(match &f.operating_point {
                            Some(op) => sub.with_operating_point(op.clone()),
                            None => sub,
                        })
                    })
                    .collect::<Result<Vec<_>, StoreError>>()?;
                Ok(evaluate(
                    &Submission {
                        model_name: model_name.clone(),
                        spec: spec.clone(),
                        files,
                        declared: declared.clone(),
                    },
                    bench,
                )?)
            }
            Payload::Reported { entry, .. } => Ok(evaluate_reported(entry, bench)?),
        }
    }
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn content_id(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub id: String,
    pub submitter: String,
    pub submitted_at_ms: u64,
    pub convention_version: String,
    pub scored: ScoredSubmission,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    submitted_at_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Index {
    fingerprint: String,
    records: Vec<SubmissionRecord>,
}

pub const SUBMISSIONS_DIR: &str = "submissions";
pub const INDEX_FILE: &str = "index.json";

/// Append-only submission directory plus a derived index.
///
/// `submissions/<id>.json` holds the canonical payload bytes and
/// `submissions/<id>.meta.json` the arrival time. `index.json` caches the
/// evaluated records and is rebuilt from the raw files whenever it is
/// missing, unreadable, or was computed against different benchmark data.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    bench: Benchmark,
    fingerprint: String,
    records: BTreeMap<String, SubmissionRecord>,
}

/// Identifies the benchmark data and cost convention an index was built with.
pub fn benchmark_fingerprint(bench: &Benchmark) -> String {
    let mut text = format!("{CONVENTION_VERSION}\n{}\n", bench.baselines.to_json());
    for g in bench.gold.values() {
        text.push_str(&g.to_text());
    }
    content_id(text.as_bytes())
}

impl Store {
    pub fn open(root: &Path, bench: Benchmark) -> Result<Self, StoreError> {
        let dir = root.join(SUBMISSIONS_DIR);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let fingerprint = benchmark_fingerprint(&bench);
        let mut store = Self {
            root: root.to_path_buf(),
            bench,
            fingerprint,
            records: BTreeMap::new(),
        };
        let cached = fs::read_to_string(root.join(INDEX_FILE))
            .ok()
            .and_then(|t| serde_json::from_str::<Index>(&t).ok())
            .filter(|ix| ix.fingerprint == store.fingerprint);
        match cached {
            Some(ix) if store.index_covers_raw(&ix)? => {
                store.records = ix.records.into_iter().map(|r| (r.id.clone(), r)).collect();
            }
            _ => store.rebuild()?,
        }
        Ok(store)
    }

    pub fn benchmark(&self) -> &Benchmark {
        &self.bench
    }

    fn raw_ids(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join(SUBMISSIONS_DIR);
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let name = entry.map_err(|e| io_err(&dir, e))?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_suffix(".json").filter(|s| !s.ends_with(".meta")) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn index_covers_raw(&self, ix: &Index) -> Result<bool, StoreError> {
        let mut indexed: Vec<&str> = ix.records.iter().map(|r| r.id.as_str()).collect();
        indexed.sort_unstable();
        Ok(indexed == self.raw_ids()?)
    }

    /// Re-evaluates every stored payload and rewrites the index.
    pub fn rebuild(&mut self) -> Result<(), StoreError> {
        self.records.clear();
        for id in self.raw_ids()? {
            let record = self.load_raw(&id)?;
            self.records.insert(id, record);
        }
        self.write_index()
    }

    fn payload_path(&self, id: &str) -> PathBuf {
        self.root.join(SUBMISSIONS_DIR).join(format!("{id}.json"))
    }

    fn meta_path(&self, id: &str) -> PathBuf {
        self.root
            .join(SUBMISSIONS_DIR)
            .join(format!("{id}.meta.json"))
    }

    /// Stored canonical payload bytes.
    pub fn raw_bytes(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.payload_path(id);
        fs::read(&path).map_err(|e| io_err(&path, e))
    }

    fn load_raw(&self, id: &str) -> Result<SubmissionRecord, StoreError> {
        let corrupt = |message: String| StoreError::Corrupt {
            id: id.to_string(),
            message,
        };
        let bytes = self.raw_bytes(id)?;
        if content_id(&bytes) != id {
            return Err(corrupt("content hash does not match file name".into()));
        }
        let payload: Payload =
            serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
        let meta_path = self.meta_path(id);
        let meta: Meta = fs::read(&meta_path)
            .map_err(|e| io_err(&meta_path, e))
            .and_then(|b| serde_json::from_slice(&b).map_err(|e| corrupt(e.to_string())))?;
        self.record(id.to_string(), &payload, meta.submitted_at_ms)
    }

    fn record(
        &self,
        id: String,
        payload: &Payload,
        submitted_at_ms: u64,
    ) -> Result<SubmissionRecord, StoreError> {
        Ok(SubmissionRecord {
            id,
            submitter: payload.submitter().to_string(),
            submitted_at_ms,
            convention_version: CONVENTION_VERSION.to_string(),
            scored: payload.evaluate(&self.bench)?,
        })
    }

    /// Evaluates and persists `payload`. Returns the record and whether it
    /// was newly created; identical content returns the existing record.
    pub fn submit(&mut self, payload: &Payload) -> Result<(SubmissionRecord, bool), StoreError> {
        let bytes = payload.to_bytes();
        let id = content_id(&bytes);
        if let Some(existing) = self.records.get(&id) {
            return Ok((existing.clone(), false));
        }
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        // never go backwards, so arrival order and timestamp order agree
        let at = self
            .records
            .values()
            .map(|r| r.submitted_at_ms + 1)
            .max()
            .map_or(now, |next| next.max(now));
        let record = self.record(id.clone(), payload, at)?;

        write_atomic(
            &self.meta_path(&id),
            &serde_json::to_vec(&Meta {
                submitted_at_ms: at,
            })
            .expect("meta"),
        )?;
        write_atomic(&self.payload_path(&id), &bytes)?;
        self.records.insert(id, record.clone());
        self.write_index()?;
        Ok((record, true))
    }

    pub fn get(&self, id: &str) -> Option<&SubmissionRecord> {
        self.records.get(id)
    }

    pub fn records(&self) -> impl Iterator<Item = &SubmissionRecord> {
        self.records.values()
    }

    fn write_index(&self) -> Result<(), StoreError> {
        let index = Index {
            fingerprint: self.fingerprint.clone(),
            records: self.records.values().cloned().collect(),
        };
        let bytes = serde_json::to_vec_pretty(&index).expect("index serializes");
        write_atomic(&self.root.join(INDEX_FILE), &bytes)
    }
}

/// Writes to a sibling temp file, syncs, then renames over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}
