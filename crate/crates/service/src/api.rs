use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE, COOKIE, SET_COOKIE};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use segrate_core::experiment::{BlindedManifest, LoadedManifest, SurveyPhase};

use crate::clock::Clock;
use crate::store::{to_jsonl, ExperimentStore, Recorded, ResponseInput, StoreError};

pub const SESSION_COOKIE: &str = "segrate_session";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub seed: u64,
    /// Directory holding one `<experiment_id>.jsonl` log per experiment.
    pub data_dir: PathBuf,
    /// Bearer token for the export endpoint; `None` disables export.
    pub export_token: Option<String>,
}

pub struct AppState {
    experiments: BTreeMap<String, Arc<ExperimentStore>>,
    export_token: Option<String>,
}

impl AppState {
    pub fn new(manifests: Vec<LoadedManifest>, config: &ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let mut experiments = BTreeMap::new();
        for loaded in manifests {
            let id = loaded.manifest.experiment_id.clone();
            if experiments.contains_key(&id) {
                return Err(StoreError::Invalid(format!("experiment '{id}' loaded twice")));
            }
            let log = config.data_dir.join(format!("{id}.jsonl"));
            let store = ExperimentStore::open(loaded, &log, config.seed, clock.clone())?;
            log::info!("experiment '{id}': {} responses replayed", store.snapshot().response_count());
            experiments.insert(id, Arc::new(store));
        }
        Ok(AppState { experiments, export_token: config.export_token.clone() })
    }

    pub fn experiment(&self, id: &str) -> Option<&Arc<ExperimentStore>> {
        self.experiments.get(id)
    }

    fn session(&self, headers: &HeaderMap) -> Result<(Arc<ExperimentStore>, String), ApiError> {
        let token = session_token(headers).ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "no session"))?;
        self.experiments
            .values()
            .find_map(|e| e.snapshot().participant_for_token(&token).map(|p| (e.clone(), p.to_string())))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unknown session"))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/experiment/{id}/manifest", get(manifest))
        .route("/api/experiment/{id}/export", get(export))
        .route("/api/stimulus/{reference}", get(stimulus))
        .route("/api/session", post(session))
        .route("/api/response", post(response))
        .route("/api/survey", post(survey))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, body: json!({ "error": message.into() }) }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::UnknownTrial(_) => StatusCode::NOT_FOUND,
            StoreError::NoSession(_) => StatusCode::UNAUTHORIZED,
            StoreError::Io { .. } | StoreError::Corrupt { .. } => {
                log::error!("{e}");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(e.status(), e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn session_token(headers: &HeaderMap) -> Option<String> {
    headers
        .get_all(COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .find_map(|kv| kv.trim().strip_prefix(SESSION_COOKIE)?.strip_prefix('=').map(str::to_string))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, StoreError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

fn find_experiment(state: &AppState, id: &str) -> ApiResult<Arc<ExperimentStore>> {
    state
        .experiment(id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown experiment '{id}'")))
}

/// Blinded manifest as a participant sees it: trials in that participant's
/// seeded order, plus the resume point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    #[serde(flatten)]
    pub manifest: BlindedManifest,
    pub participant: Option<String>,
    pub answered: usize,
    pub next_trial: Option<String>,
    pub surveys_done: Vec<SurveyPhase>,
}

async fn manifest(State(state): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Response> {
    let exp = find_experiment(&state, &id)?;
    let mut blinded = exp.manifest().manifest.blinded();
    let session = state.session(&headers).ok().filter(|(e, _)| e.experiment_id() == id);
    let body = match session {
        None => SessionManifest { manifest: blinded, participant: None, answered: 0, next_trial: None, surveys_done: vec![] },
        Some((exp, participant)) => {
            let index = exp.snapshot();
            blinded.trials = exp.trials_for(&participant).into_iter().cloned().collect();
            let p = index.participant(&participant);
            SessionManifest {
                manifest: blinded,
                answered: p.map_or(0, |p| p.responses.len()),
                next_trial: exp.next_trial(&index, &participant),
                surveys_done: p.map(|p| p.surveys.keys().copied().collect()).unwrap_or_default(),
                participant: Some(participant),
            }
        }
    };
    Ok(Json(body).into_response())
}

async fn stimulus(State(state): State<Arc<AppState>>, Path(reference): Path<String>) -> ApiResult<Response> {
    let path = state
        .experiments
        .values()
        .find_map(|e| e.manifest().stimulus_path(&reference))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown stimulus '{reference}'")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, format!("{}: {e}", path.display())))?;
    Ok(([(CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRequest {
    pub experiment_id: String,
    pub participant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReply {
    pub experiment_id: String,
    pub participant: String,
    pub token: String,
    pub created: bool,
    pub answered: usize,
    pub total: usize,
    pub next_trial: Option<String>,
}

async fn session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SessionRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let exp = find_experiment(&state, &req.experiment_id)?;
    let (store, participant) = (exp.clone(), req.participant.clone());
    let (token, created) = blocking(move || store.open_session(&participant)).await?;
    let index = exp.snapshot();
    let reply = SessionReply {
        experiment_id: req.experiment_id,
        answered: index.participant(&req.participant).map_or(0, |p| p.responses.len()),
        total: exp.manifest().manifest.trials.len(),
        next_trial: exp.next_trial(&index, &req.participant),
        participant: req.participant,
        token: token.clone(),
        created,
    };
    let cookie = format!("{SESSION_COOKIE}={token}; Path=/; HttpOnly; SameSite=Strict");
    let cookie = HeaderValue::from_str(&cookie).expect("token is header-safe");
    Ok(([(SET_COOKIE, cookie)], Json(reply)).into_response())
}

fn ack<T: Serialize>(recorded: Recorded<T>) -> Response {
    let (status, duplicate, record) = match recorded {
        Recorded::New(r) => (StatusCode::OK, false, r),
        Recorded::Duplicate(r) => (StatusCode::OK, true, r),
        Recorded::Conflict(r) => (StatusCode::CONFLICT, true, r),
    };
    let mut body = serde_json::to_value(record).expect("records serialize");
    body["duplicate"] = json!(duplicate);
    if status == StatusCode::CONFLICT {
        body["error"] = json!("already answered with different content");
    }
    (status, Json(body)).into_response()
}

async fn response(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<ResponseInput>, JsonRejection>,
) -> ApiResult<Response> {
    let (exp, participant) = state.session(&headers)?;
    let Json(input) = body?;
    let recorded = blocking(move || exp.record_response(&participant, input)).await?;
    Ok(ack(recorded))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveyRequest {
    pub phase: SurveyPhase,
    pub answers: BTreeMap<String, Value>,
}

async fn survey(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<SurveyRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let (exp, participant) = state.session(&headers)?;
    let Json(req) = body?;
    let recorded = blocking(move || exp.record_survey(&participant, req.phase, req.answers)).await?;
    Ok(ack(recorded))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    kind: Option<String>,
}

async fn export(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<ExportQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let expected = state
        .export_token
        .as_deref()
        .ok_or_else(|| ApiError::new(StatusCode::FORBIDDEN, "export is disabled"))?;
    let given = headers
        .get(AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given != Some(expected) {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "export requires the operator token"));
    }
    let exp = find_experiment(&state, &id)?;
    let body = match query.kind.as_deref().unwrap_or("ratings") {
        "ratings" => to_jsonl(&exp.export_ratings()),
        "survey" => to_jsonl(&exp.export_surveys()),
        other => return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown export kind '{other}'"))),
    };
    Ok(([(CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
