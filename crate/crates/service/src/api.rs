use std::sync::{Arc, RwLock};

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use exitbench_core::cost::ModelSpec;
use exitbench_core::evaluate::{
    dataset_ids, Declared, EvalError, ReportedEntry, BENCHMARK_DATASETS,
};
use exitbench_core::metrics::{MetricKind, TaskKind};
use exitbench_core::scoring::Track;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::board::{leaderboard, Board};
use crate::store::{CanonicalFile, Payload, Store, StoreError, SubmissionRecord};

pub type SharedStore = Arc<RwLock<Store>>;

/// Upload limit for one multipart submission.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::Io { .. } | StoreError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            StoreError::Eval(EvalError::UnknownDataset(_)) => StatusCode::BAD_REQUEST,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

pub fn router(store: SharedStore) -> Router {
    Router::new()
        .route("/api/submissions", post(submit))
        .route("/api/submissions/{id}", get(get_submission))
        .route("/api/leaderboard", get(get_leaderboard))
        .route("/api/datasets", get(get_datasets))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(store)
}

#[derive(Default)]
struct Bundle {
    spec: Option<String>,
    submitter: Option<String>,
    model_name: Option<String>,
    declared: Option<String>,
    reported: Option<String>,
    files: Vec<CanonicalFile>,
}

/// Multipart parts:
/// `spec` (model spec JSON), `trace:<dataset>[@<operating point>]` (one per
/// trace file), `submitter`, `model_name`, `declared` (JSON), or `reported`
/// (JSON) in place of spec and traces.
async fn read_bundle(mut mp: Multipart) -> Result<Bundle, ApiError> {
    let mut b = Bundle::default();
    let malformed = |e: axum::extract::multipart::MultipartError| {
        ApiError::bad_request("malformed_multipart", e.body_text())
    };
    while let Some(field) = mp.next_field().await.map_err(malformed)? {
        let name = field.name().unwrap_or_default().to_string();
        let text = field.text().await.map_err(malformed)?;
        match name.as_str() {
            "spec" => b.spec = Some(text),
            "submitter" => b.submitter = Some(text),
            "model_name" => b.model_name = Some(text),
            "declared" => b.declared = Some(text),
            "reported" => b.reported = Some(text),
            _ => {
                let Some(target) = name.strip_prefix("trace:") else {
                    return Err(ApiError::bad_request(
                        "unknown_field",
                        format!("unexpected part `{name}`"),
                    ));
                };
                let (dataset_id, operating_point) = match target.split_once('@') {
                    Some((d, op)) => (d.to_string(), Some(op.to_string())),
                    None => (target.to_string(), None),
                };
                b.files.push(CanonicalFile {
                    dataset_id,
                    operating_point,
                    trace: text,
                });
            }
        }
    }
    Ok(b)
}

fn schema(what: &str, e: impl std::fmt::Display) -> ApiError {
    ApiError::new(
        StatusCode::UNPROCESSABLE_ENTITY,
        "schema_error",
        format!("{what}: {e}"),
    )
}

fn payload(b: Bundle) -> Result<Payload, ApiError> {
    let submitter = b.submitter.unwrap_or_else(|| "anonymous".into());
    if let Some(reported) = b.reported {
        if b.spec.is_some() || !b.files.is_empty() {
            return Err(ApiError::bad_request(
                "ambiguous_bundle",
                "a reported entry cannot be combined with a spec or trace files",
            ));
        }
        let entry: ReportedEntry =
            serde_json::from_str(&reported).map_err(|e| schema("reported", e))?;
        return Ok(Payload::Reported { submitter, entry });
    }
    let spec_text = b
        .spec
        .ok_or_else(|| ApiError::bad_request("missing_spec", "bundle has no `spec` part"))?;
    let spec =
        ModelSpec::from_json(&spec_text).map_err(|e| StoreError::Eval(EvalError::Spec(e)))?;
    if b.files.is_empty() {
        return Err(StoreError::Eval(EvalError::NoFiles).into());
    }
    if let Some(f) = b
        .files
        .iter()
        .find(|f| !dataset_ids().contains(&f.dataset_id.as_str()))
    {
        return Err(StoreError::Eval(EvalError::UnknownDataset(f.dataset_id.clone())).into());
    }
    let declared: Declared = match b.declared {
        Some(t) => serde_json::from_str(&t).map_err(|e| schema("declared", e))?,
        None => Declared::default(),
    };
    let model_name = b.model_name.unwrap_or_else(|| spec.model_name.clone());
    Ok(Payload::traces(
        submitter, model_name, spec, b.files, declared,
    )?)
}

async fn submit(
    State(store): State<SharedStore>,
    mp: Multipart,
) -> Result<(StatusCode, Json<SubmissionRecord>), ApiError> {
    let payload = payload(read_bundle(mp).await?)?;
    let mut store = store.write().expect("store lock poisoned");
    let (record, created) = store.submit(&payload)?;
    let status = if created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(record)))
}

async fn get_submission(
    State(store): State<SharedStore>,
    Path(id): Path<String>,
) -> Result<Json<SubmissionRecord>, ApiError> {
    let store = store.read().expect("store lock poisoned");
    store.get(&id).cloned().map(Json).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no submission `{id}`"),
        )
    })
}

#[derive(Debug, Deserialize)]
struct BoardQuery {
    track: Option<String>,
}

async fn get_leaderboard(
    State(store): State<SharedStore>,
    Query(q): Query<BoardQuery>,
) -> Result<Json<Board>, ApiError> {
    let track = match q.track.as_deref().filter(|t| !t.is_empty()) {
        None => None,
        Some(t) => Some(Track::from_id(t).ok_or_else(|| {
            ApiError::bad_request(
                "unknown_track",
                format!("unknown track `{t}`; expected 40M, 55M, 70M or 110M"),
            )
        })?),
    };
    let store = store.read().expect("store lock poisoned");
    Ok(Json(leaderboard(store.records(), track)))
}

#[derive(Debug, Serialize)]
struct DatasetView {
    id: &'static str,
    name: &'static str,
    task_kind: TaskKind,
    metric_kind: MetricKind,
    gold_samples: Option<usize>,
    baseline_knots: Option<usize>,
}

async fn get_datasets(State(store): State<SharedStore>) -> Json<Vec<DatasetView>> {
    let store = store.read().expect("store lock poisoned");
    let bench = store.benchmark();
    Json(
        BENCHMARK_DATASETS
            .iter()
            .map(|d| DatasetView {
                id: d.id,
                name: d.name,
                task_kind: d.task_kind,
                metric_kind: d.metric_kind,
                gold_samples: bench.gold.get(d.id).map(|g| g.len()),
                baseline_knots: bench.baselines.get(d.id).map(|c| c.knots().len()),
            })
            .collect(),
    )
}
