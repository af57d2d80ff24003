//! HTTP API consumed by the review UI.
//!
//! | route | purpose |
//! |---|---|
//! | `GET /health` | liveness, never authenticated |
//! | `GET /checklist` | checklist and its batch layout |
//! | `POST /audits` | audit one summary (inline, or as a job when long) |
//! | `GET /jobs/{job_id}` | status of a background audit |
//! | `GET /audits/{note_id}/{run_id}` | one stored result |
//! | `GET /results?cohort=&note_id=` | stored results |
//! | `GET /report?cohort=` | cohort report over the latest result per note |
//! | `POST /adjudications`, `GET /adjudications?note_id=` | reviewer verdicts |
//!
//! Errors are JSON objects of the form `{"error": "..."}`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::aggregate::aggregate;
use crate::cohort::{DischargeRecord, Gender};
use crate::pipeline::{audit_record, AuditContext};
use crate::response::AuditResult;
use crate::store::{
    current_adjudications, latest_per_note, Adjudication, AdjudicationLog, ResultStore,
    StoredResult,
};

/// Shared state behind every handler.
pub struct ServiceState {
    pub ctx: Arc<AuditContext>,
    pub store: ResultStore,
    pub adjudications: AdjudicationLog,
    pub bearer_token: Option<String>,
    pub sync_char_limit: usize,
    /// Serialises run-id assignment and appends to the result store.
    write_lock: Mutex<()>,
    jobs: Mutex<BTreeMap<String, AuditJob>>,
    job_seq: AtomicU64,
}

impl ServiceState {
    pub fn new(
        ctx: Arc<AuditContext>,
        store: ResultStore,
        adjudications: AdjudicationLog,
        bearer_token: Option<String>,
        sync_char_limit: usize,
    ) -> Self {
        Self {
            ctx,
            store,
            adjudications,
            bearer_token,
            sync_char_limit,
            write_lock: Mutex::new(()),
            jobs: Mutex::new(BTreeMap::new()),
            job_seq: AtomicU64::new(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditJob {
    pub job_id: String,
    pub note_id: String,
    pub status: JobStatus,
    /// Fraction of the note's work completed, 0.0 to 1.0.
    pub progress: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRequest {
    pub text: String,
    /// When given, must match the loaded checklist.
    #[serde(default)]
    pub checklist_version: Option<String>,
    #[serde(default)]
    pub note_id: Option<String>,
}

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let api = Router::new()
        .route("/checklist", get(get_checklist))
        .route("/audits", post(post_audit))
        .route("/audits/{note_id}/{run_id}", get(get_audit))
        .route("/jobs/{job_id}", get(get_job))
        .route("/results", get(get_results))
        .route("/report", get(get_report))
        .route("/adjudications", post(post_adjudication).get(get_adjudications))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .merge(api)
        .with_state(state)
}

async fn require_token(State(state): State<Arc<ServiceState>>, req: Request, next: Next) -> Response {
    if let Some(expected) = &state.bearer_token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(expected.as_str()) {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or invalid bearer token".into())
                .into_response();
        }
    }
    next.run(req).await
}

async fn get_checklist(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    let checklist = &state.ctx.checklist;
    let batches: Vec<_> = checklist
        .batch_partition()
        .iter()
        .map(|b| {
            json!({
                "batch_id": b.batch_id,
                "question_ids": b.questions.iter().map(|q| q.id.as_str()).collect::<Vec<_>>(),
            })
        })
        .collect();
    Json(json!({ "checklist": **checklist, "batches": batches }))
}

fn adhoc_note_id(text: &str) -> String {
    format!("adhoc-{}", &hex::encode(Sha256::digest(text.as_bytes()))[..12])
}

fn adhoc_record(note_id: String, text: String) -> DischargeRecord {
    DischargeRecord {
        note_id,
        subject_id: String::new(),
        hadm_id: String::new(),
        text,
        age: 0,
        gender: Gender::Other,
        discharge_location: String::new(),
        icu_stay: false,
        icu_los: None,
        admission_los: 0.0,
        died_in_hospital: false,
    }
}

/// Audits and stores one note, assigning the next run id for it.
fn audit_and_store(state: &ServiceState, record: &DischargeRecord) -> Result<StoredResult, ApiError> {
    let result: AuditResult =
        audit_record(&state.ctx, record).map_err(|e| ApiError(StatusCode::BAD_GATEWAY, e.to_string()))?;
    if result.skipped {
        let reason = result.skip_reason.unwrap_or_default();
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, reason));
    }
    let _guard = state.write_lock.lock().unwrap();
    let n = state.store.run_count(&record.note_id).map_err(internal)?;
    let stored = StoredResult {
        run_id: format!("r{}", n + 1),
        result,
    };
    state.store.append(std::slice::from_ref(&stored)).map_err(internal)?;
    Ok(stored)
}

async fn post_audit(
    State(state): State<Arc<ServiceState>>,
    Json(req): Json<AuditRequest>,
) -> Result<Response, ApiError> {
    if let Some(v) = &req.checklist_version {
        if *v != state.ctx.checklist.version {
            return Err(ApiError(
                StatusCode::CONFLICT,
                format!("checklist version {v} is not loaded (have {})", state.ctx.checklist.version),
            ));
        }
    }
    if req.text.trim().is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "text is empty".into()));
    }
    let note_id = req.note_id.unwrap_or_else(|| adhoc_note_id(&req.text));
    let long = req.text.chars().count() > state.sync_char_limit;
    let record = adhoc_record(note_id.clone(), req.text);

    if !long {
        let state = state.clone();
        let stored = tokio::task::spawn_blocking(move || audit_and_store(&state, &record))
            .await
            .map_err(internal)??;
        return Ok(Json(stored).into_response());
    }

    let job_id = format!("job-{}", state.job_seq.fetch_add(1, Ordering::SeqCst) + 1);
    let job = AuditJob {
        job_id: job_id.clone(),
        note_id,
        status: JobStatus::Queued,
        progress: 0.0,
        run_id: None,
        error: None,
    };
    state.jobs.lock().unwrap().insert(job_id.clone(), job.clone());
    let worker = state.clone();
    tokio::task::spawn_blocking(move || {
        let update = |f: &dyn Fn(&mut AuditJob)| {
            if let Some(j) = worker.jobs.lock().unwrap().get_mut(&job_id) {
                f(j);
            }
        };
        update(&|j| j.status = JobStatus::Running);
        match audit_and_store(&worker, &record) {
            Ok(stored) => update(&|j| {
                j.status = JobStatus::Done;
                j.progress = 1.0;
                j.run_id = Some(stored.run_id.clone());
            }),
            Err(ApiError(_, msg)) => update(&|j| {
                j.status = JobStatus::Failed;
                j.error = Some(msg.clone());
            }),
        }
    });
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn get_job(
    State(state): State<Arc<ServiceState>>,
    Path(job_id): Path<String>,
) -> Result<Json<AuditJob>, ApiError> {
    state
        .jobs
        .lock()
        .unwrap()
        .get(&job_id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no job {job_id}")))
}

async fn get_audit(
    State(state): State<Arc<ServiceState>>,
    Path((note_id, run_id)): Path<(String, String)>,
) -> Result<Json<StoredResult>, ApiError> {
    state
        .store
        .find(&note_id, &run_id)
        .map_err(internal)?
        .map(Json)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no result for {note_id} run {run_id}")))
}

#[derive(Debug, Default, Deserialize)]
struct ResultsQuery {
    cohort: Option<String>,
    note_id: Option<String>,
}

async fn get_results(
    State(state): State<Arc<ServiceState>>,
    Query(q): Query<ResultsQuery>,
) -> Result<Json<Vec<StoredResult>>, ApiError> {
    let all = state.store.load().map_err(internal)?;
    Ok(Json(
        all.into_iter()
            .filter(|r| q.cohort.as_ref().is_none_or(|c| *c == r.run_id))
            .filter(|r| q.note_id.as_ref().is_none_or(|n| *n == r.result.note_id))
            .collect(),
    ))
}

async fn get_report(
    State(state): State<Arc<ServiceState>>,
    Query(q): Query<ResultsQuery>,
) -> Result<Response, ApiError> {
    let all = state.store.load().map_err(internal)?;
    let latest: Vec<AuditResult> = latest_per_note(all, q.cohort.as_deref())
        .into_iter()
        .map(|s| s.result)
        .collect();
    if latest.is_empty() {
        return Err(ApiError(StatusCode::NOT_FOUND, "no stored results".into()));
    }
    let report = aggregate(&latest).map_err(|e| ApiError(StatusCode::CONFLICT, e.to_string()))?;
    Ok(Json(report).into_response())
}

#[derive(Debug, Deserialize)]
struct AdjudicationRequest {
    note_id: String,
    question_id: String,
    verdict: String,
    annotator_id: String,
    #[serde(default)]
    note: Option<String>,
}

async fn post_adjudication(
    State(state): State<Arc<ServiceState>>,
    Json(req): Json<AdjudicationRequest>,
) -> Result<Response, ApiError> {
    let bad = |m: String| ApiError(StatusCode::BAD_REQUEST, m);
    let verdict = req.verdict.parse().map_err(|e| bad(format!("{e}")))?;
    state
        .ctx
        .checklist
        .question(&req.question_id)
        .map_err(|e| bad(e.to_string()))?;
    if req.note_id.trim().is_empty() || req.annotator_id.trim().is_empty() {
        return Err(bad("note_id and annotator_id are required".into()));
    }
    let adjudication = Adjudication {
        note_id: req.note_id,
        question_id: req.question_id,
        verdict,
        annotator_id: req.annotator_id,
        note: req.note,
    };
    {
        let _guard = state.write_lock.lock().unwrap();
        state
            .adjudications
            .append(std::slice::from_ref(&adjudication))
            .map_err(internal)?;
    }
    Ok((StatusCode::CREATED, Json(adjudication)).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct AdjudicationQuery {
    note_id: Option<String>,
}

async fn get_adjudications(
    State(state): State<Arc<ServiceState>>,
    Query(q): Query<AdjudicationQuery>,
) -> Result<Json<Vec<Adjudication>>, ApiError> {
    let all = state.adjudications.load().map_err(internal)?;
    Ok(Json(
        current_adjudications(all)
            .into_iter()
            .filter(|a| q.note_id.as_ref().is_none_or(|n| *n == a.note_id))
            .collect(),
    ))
}

/// Serves `router` on `listener` until the process ends.
pub fn serve_blocking(listener: std::net::TcpListener, router: Router) -> std::io::Result<()> {
    listener.set_nonblocking(true)?;
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, router).await
        })
}

/// A router served from a background thread; stops when dropped.
pub struct BackgroundServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl BackgroundServer {
    /// Serves on an ephemeral loopback port.
    pub fn start(router: Router) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                // Dropping the runtime afterwards aborts open connections, so
                // shutdown never waits on a client's keep-alive pool.
                tokio::select! {
                    _ = axum::serve(listener, router) => {}
                    _ = rx => {}
                }
            });
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
