//! HTTP JSON service.
//!
//! Every request except image fetches carries `Authorization: Bearer
//! <token>`. A token's holder is registered with its role on first use.
//! All writes go through the single [`Store`] behind a mutex, so they are
//! applied in log order.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Body;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Query, State as Ext};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use elicit_core::agreement::AgreementError;
use elicit_core::corpus::{corpus_counts, Corpus, LanguageCode, Method};
use elicit_core::metrics::{MetricError, MtldConfig, Pairing, SentenceAggregation};
use elicit_core::protocol::{
    Action, ElicitationSession, EvaluationTask, ProtocolError, RawChoice, Role, ScenePayload, SessionState, TaskKind,
    TaskPayload, TaskRequest, Track,
};
use elicit_core::state::{BatchManifest, BatchSpec, KappaBasis, State};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bundle::safe_relative;
use crate::export::{judgment_rows, write_judgments};
use crate::inputs::{read_embeddings, read_pos};
use crate::ops::{self, MetricKind, MetricQuery, OpError};
use crate::store::{Clock, Store, StoreError};
use crate::tokens::{AuthError, TokenBook};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedPolicy {
    /// Draw a fresh seed per batch and record it.
    Random,
    Fixed(u64),
}

impl std::str::FromStr for SeedPolicy {
    type Err = String;

    /// `random` or `fixed:<u64>`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "random" => Ok(SeedPolicy::Random),
            Some(("fixed", n)) => n.parse().map(SeedPolicy::Fixed).map_err(|e| format!("bad seed `{n}`: {e}")),
            _ => Err(format!("expected `random` or `fixed:<seed>`, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub default_gap_seconds: u64,
    pub allow_gap_override: bool,
    pub seed_policy: SeedPolicy,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            default_gap_seconds: elicit_core::protocol::DEFAULT_GAP_SECONDS,
            allow_gap_override: false,
            seed_policy: SeedPolicy::Random,
        }
    }
}

pub struct AppState {
    store: Mutex<Store>,
    tokens: Mutex<TokenBook>,
    clock: Arc<dyn Clock>,
    data_dir: PathBuf,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(store: Store, clock: Arc<dyn Clock>, config: ServiceConfig) -> std::io::Result<Arc<AppState>> {
        let data_dir = store.dir().to_path_buf();
        let tokens = TokenBook::load(&data_dir)?;
        Ok(Arc::new(AppState { store: Mutex::new(store), tokens: Mutex::new(tokens), clock, data_dir, config }))
    }

    fn store(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` with the store; for tests and the shutdown snapshot.
    pub fn with_store<T>(&self, f: impl FnOnce(&mut Store) -> T) -> T {
        f(&mut self.store())
    }

    fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn authenticate(&self, headers: &HeaderMap, allowed: &[Role]) -> Result<Principal, ApiError> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or(ApiError::Auth(AuthError::Missing))?;
        let now = self.now();
        let record = {
            let mut book = self.tokens.lock().unwrap_or_else(|p| p.into_inner());
            if !book.contains(token) {
                book.reload().map_err(|e| ApiError::Internal(e.to_string()))?;
            }
            book.lookup(token, now).map_err(ApiError::Auth)?.clone()
        };
        if !allowed.contains(&record.role) {
            return Err(ApiError::Forbidden(format!("role {:?} may not use this endpoint", record.role).to_lowercase()));
        }
        let mut store = self.store();
        if let Some(e) = store.state().prepare_registration(&record.annotator_id, record.role) {
            store.commit(e)?;
        }
        Ok(Principal { annotator_id: record.annotator_id, role: record.role })
    }
}

#[derive(Clone, Debug)]
struct Principal {
    annotator_id: String,
    role: Role,
}

impl Principal {
    fn is_admin(&self) -> bool {
        self.role == Role::Admin
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    Auth(AuthError),
    Forbidden(String),
    NotFound(String),
    Conflict(&'static str, String),
    Op(OpError),
    Internal(String),
}

impl From<ProtocolError> for ApiError {
    fn from(e: ProtocolError) -> Self {
        ApiError::Op(e.into())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::Op(e.into())
    }
}

impl From<OpError> for ApiError {
    fn from(e: OpError) -> Self {
        ApiError::Op(e)
    }
}

impl From<AgreementError> for ApiError {
    fn from(e: AgreementError) -> Self {
        ApiError::Op(e.into())
    }
}

impl From<MetricError> for ApiError {
    fn from(e: MetricError) -> Self {
        ApiError::Op(e.into())
    }
}

fn protocol_status(e: &ProtocolError) -> StatusCode {
    use ProtocolError::*;
    match e {
        UnknownAnnotator(_) | UnknownCorpus(_) | UnknownStoryboard(_) | UnknownScene { .. } | UnknownSession(_)
        | UnknownBatch(_) | UnknownTask(_) | UnknownUnit(_) => StatusCode::NOT_FOUND,
        InvalidTransition { .. } | GapNotElapsed { .. } | DuplicateSession { .. } | CorpusExists(_)
        | AlreadyJudged(_) | DuplicateJudgment { .. } => StatusCode::CONFLICT,
        NotAssigned { .. } | Forbidden { .. } => StatusCode::FORBIDDEN,
        EmptyText | EmptySample | InsufficientPairedScenes { .. } | NoRaters | TooFewAnnotators { .. }
        | InfeasibleAssignment { .. } | Corpus(_) => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message) = match &self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m.clone()),
            ApiError::Auth(e) => (StatusCode::UNAUTHORIZED, "unauthorized", e.to_string()),
            ApiError::Forbidden(m) => (StatusCode::FORBIDDEN, "forbidden", m.clone()),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m.clone()),
            ApiError::Conflict(code, m) => (StatusCode::CONFLICT, *code, m.clone()),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", m.clone()),
            ApiError::Op(e) => {
                let status = match e {
                    OpError::Protocol(p) => protocol_status(p),
                    OpError::Store(StoreError::ReadOnly | StoreError::Io { .. } | StoreError::Locked(_)) => {
                        StatusCode::SERVICE_UNAVAILABLE
                    }
                    OpError::Store(_) | OpError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
                    OpError::Metric(MetricError::Corpus(elicit_core::corpus::CorpusError::UnknownLanguage(_))) => {
                        StatusCode::NOT_FOUND
                    }
                    OpError::Usage(_) => StatusCode::BAD_REQUEST,
                    _ => StatusCode::UNPROCESSABLE_ENTITY,
                };
                (status, e.code(), e.to_string())
            }
        };
        let mut body = json!({ "error": code, "message": message });
        match &self {
            ApiError::Op(OpError::Protocol(ProtocolError::GapNotElapsed { remaining_seconds })) => {
                body["remaining_seconds"] = json!(remaining_seconds);
            }
            ApiError::Op(OpError::Invalid(report)) => body["findings"] = json!(report),
            ApiError::Op(OpError::Bundle(crate::bundle::BundleError::Records(errors))) => {
                body["records"] = json!(errors.iter().map(ToString::to_string).collect::<Vec<_>>());
            }
            _ => {}
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type App = Arc<AppState>;

fn body<T>(r: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    r.map(|Json(t)| t).map_err(|e| ApiError::BadRequest(e.body_text()))
}

fn query<T>(r: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    r.map(|Query(t)| t).map_err(|e| ApiError::BadRequest(e.body_text()))
}

const ANYONE: &[Role] = &[Role::Translator, Role::Evaluator, Role::Admin];
const ADMIN: &[Role] = &[Role::Admin];
const TRANSLATOR: &[Role] = &[Role::Translator, Role::Admin];
const EVALUATOR: &[Role] = &[Role::Evaluator, Role::Admin];

pub fn router(app: App) -> Router {
    Router::new()
        .route("/corpora", post(upload_corpus).layer(DefaultBodyLimit::max(512 * 1024 * 1024)))
        .route("/corpora/{id}/counts", get(corpus_counts_route))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/reading", get(get_reading))
        .route("/sessions/{id}/reading/start", post(start_reading))
        .route("/sessions/{id}/reading/complete", post(complete_reading))
        .route("/sessions/{id}/annotation/begin", post(begin_annotation))
        .route("/sessions/{id}/scenes/next", get(next_scene))
        .route("/sessions/{id}/translations", post(submit_translation))
        .route("/sessions/{id}/complete", post(complete_session))
        .route("/batches", post(create_batch))
        .route("/batches/{id}", get(get_batch))
        .route("/tasks/next", get(next_task))
        .route("/tasks/{id}/judgments", post(submit_judgment))
        .route("/reports/tally", get(report_tally))
        .route("/reports/kappa", get(report_kappa))
        .route("/reports/metrics", get(report_metrics))
        .route("/reports/judgments", get(report_judgments))
        .route("/images/{*path}", get(image))
        .with_state(app)
}

/// Serves until ctrl-c, then writes a final snapshot.
pub async fn serve(app: App, listen: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    app.with_store(|s| s.snapshot()).map_err(std::io::Error::other)
}

// ---- leak screens ----

/// Every (key, string value) pair in a JSON document.
fn walk<'a>(v: &'a Value, key: &'a str, out: &mut Vec<(&'a str, &'a str)>) {
    match v {
        Value::String(s) => out.push((key, s)),
        Value::Array(items) => items.iter().for_each(|i| walk(i, key, out)),
        Value::Object(map) => {
            for (k, v) in map {
                out.push((k, ""));
                walk(v, k, out);
            }
        }
        _ => {}
    }
}

const METHOD_WORDS: [&str; 2] = ["text", "storyboard"];

/// Checks a task payload for anything that would reveal which slot holds
/// which method, and for English in fluency tasks.
pub fn screen_task(payload: &Value, task: &EvaluationTask, corpus: &Corpus) -> Result<(), String> {
    let mut pairs = Vec::new();
    walk(payload, "", &mut pairs);
    let english = corpus.scene(&task.storyboard_id, task.scene_index).map(|s| s.english_text.as_str());
    for (key, value) in pairs {
        let k = key.to_lowercase();
        if ["method", "blinding", "slot", "unit", "storyboard", "text", "translator"].iter().any(|w| k.contains(w)) {
            return Err(format!("field `{key}` is not allowed in a task payload"));
        }
        let v = value.to_lowercase();
        if METHOD_WORDS.contains(&v.trim()) {
            return Err(format!("field `{key}` carries a method label"));
        }
        for id in [&task.slot1_unit_id, &task.slot2_unit_id, &task.storyboard_id] {
            if !value.is_empty() && value.contains(id.as_str()) {
                return Err(format!("field `{key}` carries an internal id"));
            }
        }
        if task.task_kind == TaskKind::Fluency && english.is_some_and(|e| !value.is_empty() && value.contains(e)) {
            return Err(format!("field `{key}` carries the English source"));
        }
    }
    Ok(())
}

/// Checks a scene payload of a treatment session for English text.
pub fn screen_scene(payload: &Value, session: &ElicitationSession, corpus: &Corpus) -> Result<(), String> {
    if session.track != Track::TreatmentStoryboard {
        return Ok(());
    }
    let Some(sb) = corpus.storyboard(&session.storyboard_id) else { return Ok(()) };
    let mut pairs = Vec::new();
    walk(payload, "", &mut pairs);
    for (key, value) in pairs {
        if key.contains("english") {
            return Err(format!("field `{key}` is not allowed in a treatment scene"));
        }
        if sb.scenes.iter().any(|s| !value.is_empty() && value.contains(s.english_text.as_str())) {
            return Err(format!("field `{key}` carries English text"));
        }
    }
    Ok(())
}

// ---- corpora ----

#[derive(Deserialize)]
struct UploadQuery {
    id: Option<String>,
}

async fn upload_corpus(
    Ext(app): Ext<App>,
    headers: HeaderMap,
    q: Result<Query<UploadQuery>, QueryRejection>,
    mut multipart: Multipart,
) -> ApiResult<(StatusCode, Json<Value>)> {
    app.authenticate(&headers, ADMIN)?;
    let q = query(q)?;
    if let Some(id) = &q.id {
        if safe_relative(id).is_none_or(|p| p.components().count() != 1) {
            return Err(ApiError::BadRequest(format!("bad corpus id `{id}`")));
        }
    }
    let staging = app.data_dir.join("uploads").join(format!("{:016x}", rand::rng().random::<u64>()));
    let result = async {
        while let Some(field) = multipart.next_field().await.map_err(|e| ApiError::BadRequest(e.body_text()))? {
            let name = field.name().or(field.file_name()).unwrap_or_default().to_string();
            let rel = safe_relative(&name).ok_or_else(|| ApiError::BadRequest(format!("bad part name `{name}`")))?;
            let bytes = field.bytes().await.map_err(|e| ApiError::BadRequest(e.body_text()))?;
            let path = staging.join(rel);
            let write = || -> std::io::Result<()> {
                fs::create_dir_all(path.parent().expect("joined path has a parent"))?;
                fs::write(&path, &bytes)
            };
            write().map_err(|e| ApiError::Internal(e.to_string()))?;
        }
        if !staging.exists() {
            return Err(ApiError::BadRequest("empty upload".into()));
        }
        let mut store = app.store();
        let imported = ops::import_bundle(&mut store, &staging, q.id.clone())?;
        let counts = counts_json(&app.data_dir, &imported.corpus_id, store.state().corpus(&imported.corpus_id)?);
        Ok((StatusCode::CREATED, Json(json!({ "corpus_id": imported.corpus_id, "counts": counts, "warnings": imported.report.warnings }))))
    }
    .await;
    let _ = fs::remove_dir_all(&staging);
    result
}

fn counts_json(data_dir: &Path, corpus_id: &str, corpus: &Corpus) -> Value {
    let languages = ops::corpus_languages(data_dir, corpus_id);
    let counts = corpus_counts(corpus);
    let rows: Vec<Value> = languages
        .ordered(corpus)
        .iter()
        .map(|code| {
            json!({
                "language": code,
                "name": languages.name(code),
                "text": counts.get(code, Method::Text),
                "storyboard": counts.get(code, Method::Storyboard),
            })
        })
        .collect();
    json!({ "corpus_id": corpus_id, "rows": rows, "total": counts.total() })
}

async fn corpus_counts_route(Ext(app): Ext<App>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    app.authenticate(&headers, ANYONE)?;
    let store = app.store();
    let corpus = store.state().corpus(&id)?;
    Ok(Json(counts_json(&app.data_dir, &id, corpus)))
}

// ---- sessions ----

#[derive(Deserialize)]
struct CreateSession {
    corpus_id: Option<String>,
    storyboard_id: String,
    language: LanguageCode,
    track: Track,
    gap_seconds: Option<u64>,
}

#[derive(Serialize)]
struct SessionView {
    #[serde(flatten)]
    session: ElicitationSession,
    #[serde(skip_serializing_if = "Option::is_none")]
    annotation_available_at: Option<DateTime<Utc>>,
}

impl SessionView {
    fn new(session: &ElicitationSession) -> Json<SessionView> {
        let annotation_available_at = match session.state {
            SessionState::Gap => {
                session.reading_completed_at.map(|t| t + chrono::Duration::seconds(session.gap_seconds as i64))
            }
            _ => None,
        };
        Json(SessionView { session: session.clone(), annotation_available_at })
    }
}

async fn create_session(
    Ext(app): Ext<App>,
    headers: HeaderMap,
    req: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let who = app.authenticate(&headers, TRANSLATOR)?;
    let req = body(req)?;
    if req.gap_seconds.is_some() && !app.config.allow_gap_override {
        return Err(ApiError::BadRequest("gap_seconds cannot be set on this server".into()));
    }
    let gap = req.gap_seconds.unwrap_or(app.config.default_gap_seconds);
    let mut store = app.store();
    let corpus_id = ops::default_corpus(store.state(), req.corpus_id.as_deref())?;
    let event = store.state().prepare_session(
        &who.annotator_id,
        &corpus_id,
        &req.storyboard_id,
        req.language,
        req.track,
        Some(gap),
        app.now(),
    )?;
    let elicit_core::state::Event::SessionCreated { session } = &event else { unreachable!() };
    let id = session.id.clone();
    store.commit(event)?;
    Ok((StatusCode::CREATED, SessionView::new(store.state().session(&id)?)))
}

fn owned<'a>(state: &'a State, id: &str, who: &Principal) -> ApiResult<&'a ElicitationSession> {
    let session = state.session(id)?;
    if !who.is_admin() && session.annotator_id != who.annotator_id {
        return Err(ApiError::Forbidden(format!("session `{id}` belongs to another annotator")));
    }
    Ok(session)
}

async fn get_session(Ext(app): Ext<App>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionView>> {
    let who = app.authenticate(&headers, TRANSLATOR)?;
    let store = app.store();
    Ok(SessionView::new(owned(store.state(), &id, &who)?))
}

async fn get_reading(Ext(app): Ext<App>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let who = app.authenticate(&headers, TRANSLATOR)?;
    let store = app.store();
    let session = owned(store.state(), &id, &who)?;
    if session.state != SessionState::Reading {
        return Err(ApiError::Conflict("reading_closed", format!("session `{id}` is not in its reading phase")));
    }
    Ok(Json(json!(store.state().reading_payload(&id)?)))
}

fn advance(app: &AppState, headers: &HeaderMap, id: &str, action: Action) -> ApiResult<Json<SessionView>> {
    let who = app.authenticate(headers, TRANSLATOR)?;
    let mut store = app.store();
    owned(store.state(), id, &who)?;
    let event = store.state().prepare_advance(id, action, app.now())?;
    store.commit(event)?;
    Ok(SessionView::new(store.state().session(id)?))
}

async fn start_reading(Ext(app): Ext<App>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionView>> {
    advance(&app, &headers, &id, Action::StartReading)
}

async fn complete_reading(Ext(app): Ext<App>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionView>> {
    advance(&app, &headers, &id, Action::CompleteReading)
}

async fn begin_annotation(Ext(app): Ext<App>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionView>> {
    advance(&app, &headers, &id, Action::BeginAnnotation)
}

async fn complete_session(Ext(app): Ext<App>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionView>> {
    advance(&app, &headers, &id, Action::Complete)
}

async fn next_scene(Ext(app): Ext<App>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let who = app.authenticate(&headers, TRANSLATOR)?;
    let store = app.store();
    let session = owned(store.state(), &id, &who)?;
    let Some(scene) = store.state().next_scene(&id)? else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let payload = scene_json(&scene);
    screen_scene(&payload, session, store.state().corpus(&session.corpus_id)?).map_err(ApiError::Internal)?;
    Ok(Json(payload).into_response())
}

fn scene_json(scene: &ScenePayload) -> Value {
    serde_json::to_value(scene).expect("payload serializes")
}

#[derive(Deserialize)]
struct SubmitTranslation {
    scene_index: u32,
    text: String,
}

async fn submit_translation(
    Ext(app): Ext<App>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
    req: Result<Json<SubmitTranslation>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let who = app.authenticate(&headers, TRANSLATOR)?;
    let req = body(req)?;
    let mut store = app.store();
    owned(store.state(), &id, &who)?;
    let now = app.now();
    let event = store.state().prepare_translation(&id, req.scene_index, &req.text, now)?;
    let elicit_core::state::Event::TranslationSubmitted { unit, .. } = &event else { unreachable!() };
    let reply = json!({ "unit_id": unit.id, "scene_index": unit.scene_index, "submitted_at": now });
    store.commit(event)?;
    Ok((StatusCode::CREATED, Json(reply)))
}

// ---- batches and tasks ----

fn default_sample() -> usize {
    100
}

fn default_raters() -> usize {
    3
}

#[derive(Deserialize)]
struct CreateBatch {
    corpus_id: Option<String>,
    language: LanguageCode,
    task_kind: TaskKind,
    #[serde(default = "default_sample")]
    sample_size: usize,
    seed: Option<u64>,
    #[serde(default)]
    shared_languages: Vec<LanguageCode>,
    #[serde(default = "default_raters")]
    raters_per_task: usize,
    annotators: Option<Vec<String>>,
}

#[derive(Serialize)]
struct BatchView {
    manifest: BatchManifest,
    load: BTreeMap<String, usize>,
    judgments: usize,
}

fn batch_view(state: &State, id: &str) -> ApiResult<Json<BatchView>> {
    let batch = state.batch(id)?;
    Ok(Json(BatchView {
        manifest: batch.manifest.clone(),
        load: ops::assignment_load(batch),
        judgments: state.batch_judgments(id)?.len(),
    }))
}

async fn create_batch(
    Ext(app): Ext<App>,
    headers: HeaderMap,
    req: Result<Json<CreateBatch>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<BatchView>)> {
    app.authenticate(&headers, ADMIN)?;
    let req = body(req)?;
    let now = app.now();
    let seed = req.seed.unwrap_or_else(|| match app.config.seed_policy {
        SeedPolicy::Fixed(s) => s,
        SeedPolicy::Random => rand::rng().random(),
    });
    let annotators = match req.annotators {
        Some(a) => a,
        None => {
            let mut book = app.tokens.lock().unwrap_or_else(|p| p.into_inner());
            book.reload().map_err(|e| ApiError::Internal(e.to_string()))?;
            book.evaluators(now)
        }
    };
    let mut store = app.store();
    let annotators = if annotators.is_empty() { store.state().evaluators() } else { annotators };
    let corpus_id = ops::default_corpus(store.state(), req.corpus_id.as_deref())?;
    let mut request = TaskRequest::new(req.language, req.task_kind, req.sample_size, seed);
    request.shared_languages = req.shared_languages;
    let spec = BatchSpec { corpus_id, request };
    let batch = ops::create_assigned_batch(&mut store, &spec, req.raters_per_task, &annotators, now)?;
    Ok((StatusCode::CREATED, batch_view(store.state(), &batch.manifest.batch_id)?))
}

async fn get_batch(Ext(app): Ext<App>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> ApiResult<Json<BatchView>> {
    app.authenticate(&headers, ADMIN)?;
    let store = app.store();
    batch_view(store.state(), &id)
}

#[derive(Deserialize)]
struct NextTaskQuery {
    annotator: Option<String>,
}

async fn next_task(
    Ext(app): Ext<App>,
    headers: HeaderMap,
    q: Result<Query<NextTaskQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let who = app.authenticate(&headers, EVALUATOR)?;
    let q = query(q)?;
    let annotator = q.annotator.unwrap_or_else(|| who.annotator_id.clone());
    if !who.is_admin() && annotator != who.annotator_id {
        return Err(ApiError::Forbidden("evaluators may only fetch their own tasks".into()));
    }
    let store = app.store();
    let Some(payload) = store.state().next_task(&annotator)? else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let value = task_json(&payload);
    let (batch, task) = store.state().task(&payload.task_id)?;
    screen_task(&value, task, store.state().corpus(&batch.manifest.corpus_id)?).map_err(ApiError::Internal)?;
    Ok(Json(value).into_response())
}

fn task_json(payload: &TaskPayload) -> Value {
    serde_json::to_value(payload).expect("payload serializes")
}

#[derive(Deserialize)]
struct SubmitJudgment {
    raw_choice: RawChoice,
}

async fn submit_judgment(
    Ext(app): Ext<App>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
    req: Result<Json<SubmitJudgment>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let who = app.authenticate(&headers, EVALUATOR)?;
    let req = body(req)?;
    let now = app.now();
    let mut store = app.store();
    let event = store.state().prepare_judgment(&id, &who.annotator_id, req.raw_choice, now)?;
    store.commit(event)?;
    Ok((StatusCode::CREATED, Json(json!({ "task_id": id, "raw_choice": req.raw_choice, "submitted_at": now }))))
}

// ---- reports ----

#[derive(Deserialize)]
struct BatchQuery {
    batch: String,
    #[serde(default)]
    basis: KappaBasis,
}

async fn report_tally(
    Ext(app): Ext<App>,
    headers: HeaderMap,
    q: Result<Query<BatchQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    app.authenticate(&headers, ADMIN)?;
    let q = query(q)?;
    let store = app.store();
    let report = store.state().tally(&q.batch)?;
    let [s, t, b] = crate::report::rounded_percentages(&report.tally);
    Ok(Json(json!({
        "batch": q.batch,
        "storyboard": s,
        "text": t,
        "both": b,
        "p_value": report.p_value,
        "counts": report.tally,
        "total": report.tally.total(),
    })))
}

async fn report_kappa(
    Ext(app): Ext<App>,
    headers: HeaderMap,
    q: Result<Query<BatchQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    app.authenticate(&headers, ADMIN)?;
    let q = query(q)?;
    let store = app.store();
    let report = store.state().kappa(&q.batch, q.basis)??;
    Ok(Json(json!(report)))
}

#[derive(Deserialize)]
struct MetricsQuery {
    language: Option<LanguageCode>,
    metric: MetricKind,
    method: Option<Method>,
    corpus: Option<String>,
    #[serde(default = "default_pairing")]
    pairing: Pairing,
    #[serde(default)]
    aggregation: Option<SentenceAggregation>,
}

fn default_pairing() -> Pairing {
    Pairing::VsEnglish
}

async fn report_metrics(
    Ext(app): Ext<App>,
    headers: HeaderMap,
    q: Result<Query<MetricsQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    app.authenticate(&headers, ADMIN)?;
    let q = query(q)?;
    let corpus = {
        let store = app.store();
        let id = ops::default_corpus(store.state(), q.corpus.as_deref())?;
        (id.clone(), store.state().corpus(&id)?.clone())
    };
    let (corpus_id, corpus) = corpus;
    let inputs = ops::inputs_dir(&app.data_dir);
    let load_embeddings = || -> ApiResult<_> {
        let p = inputs.join("embeddings.jsonl");
        if !p.exists() {
            return Err(ApiError::NotFound("no embeddings uploaded".into()));
        }
        read_embeddings(&p).map_err(|e| ApiError::Op(e.into()))
    };
    let load_pos = || -> ApiResult<_> {
        let p = inputs.join("pos.jsonl");
        if !p.exists() {
            return Err(ApiError::NotFound("no POS distributions uploaded".into()));
        }
        read_pos(&p).map_err(|e| ApiError::Op(e.into()))
    };
    let embeddings = if q.metric == MetricKind::Similarity { Some(load_embeddings()?) } else { None };
    let pos = if q.metric == MetricKind::Perplexity { Some(load_pos()?) } else { None };
    let languages = ops::corpus_languages(&app.data_dir, &corpus_id);
    let query = MetricQuery {
        kind: q.metric,
        language: q.language,
        method: q.method,
        pairing: q.pairing,
        mtld: MtldConfig::default(),
        aggregation: q.aggregation.unwrap_or_default(),
    };
    let rows = ops::metric_rows(&corpus, &languages.ordered(&corpus), &query, embeddings.as_ref(), pos.as_ref())?;
    Ok(Json(json!({ "corpus_id": corpus_id, "metric": q.metric, "rows": rows })))
}

async fn report_judgments(
    Ext(app): Ext<App>,
    headers: HeaderMap,
    q: Result<Query<BatchQuery>, QueryRejection>,
) -> ApiResult<Response> {
    app.authenticate(&headers, ADMIN)?;
    let q = query(q)?;
    let rows = judgment_rows(app.store().state(), &q.batch, None)?;
    let mut buf = Vec::new();
    write_judgments(&mut buf, &rows).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf).into_response())
}

// ---- images ----

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

/// Scene images by their bundle-relative reference, searched across
/// imported corpora in id order.
async fn image(Ext(app): Ext<App>, UrlPath(path): UrlPath<String>) -> ApiResult<Response> {
    let rel = safe_relative(&path).ok_or_else(|| ApiError::NotFound(path.clone()))?;
    let ids: Vec<String> = app.store().state().corpora().keys().cloned().collect();
    for id in ids {
        let file = ops::corpora_dir(&app.data_dir).join(id).join(&rel);
        if file.is_file() {
            let bytes = fs::read(&file).map_err(|e| ApiError::Internal(e.to_string()))?;
            return Ok(([(header::CONTENT_TYPE, content_type(&file))], Body::from(bytes)).into_response());
        }
    }
    Err(ApiError::NotFound(format!("image `{path}`")))
}
