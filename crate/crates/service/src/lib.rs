//! Local JSON-over-HTTP API over one project, plus the static correction
//! UI.
//!
//! Reads go straight to the last durable project state. Mutations run on
//! the blocking pool and take the project lock inside the core library.
//! Sampling a batch and fine-tuning run as background jobs polled through
//! `GET /api/jobs/{id}`, one at a time.

mod error;
mod jobs;
mod statics;
mod views;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use iterbank::agreement::{self, AgreementStudy};
use iterbank::project::{Project, TokenEdit};
use serde::Deserialize;
use serde_json::{json, Value};

pub use error::ApiError;
pub use jobs::{Job, JobState};
pub use views::{SentenceView, TokenView};

/// Header carrying the free-text annotator id recorded with every edit.
pub const ANNOTATOR_HEADER: &str = "x-annotator";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

pub struct AppState {
    project: Project,
    ui_dir: Option<PathBuf>,
    jobs: Arc<jobs::Jobs>,
    idempotent: Mutex<HashMap<String, (u16, Value)>>,
}

impl AppState {
    pub fn new(project: Project, ui_dir: Option<PathBuf>) -> Arc<Self> {
        Arc::new(AppState {
            project,
            ui_dir,
            jobs: Arc::default(),
            idempotent: Mutex::default(),
        })
    }
}

type Shared = Arc<AppState>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/project", get(get_project))
        .route("/api/labels", get(get_labels))
        .route("/api/trend", get(get_trend))
        .route("/api/batches/next", post(post_next_batch))
        .route("/api/batches/{i}", get(get_batch))
        .route("/api/batches/{i}/sentences", get(get_batch_sentences))
        .route("/api/batches/{i}/report", get(get_report))
        .route("/api/batches/{i}/finalize", post(post_finalize))
        .route("/api/batches/{i}/finetune", post(post_finetune))
        .route("/api/sentences/{sid}", get(get_sentence))
        .route("/api/sentences/{sid}/tokens/{tid}", patch(patch_token))
        .route("/api/agreement/{study}", get(get_agreement))
        .route("/api/jobs/{id}", get(get_job))
        .fallback(statics::serve_static)
        .with_state(state)
}

/// Serves `project_dir` on `bind` until interrupted.
pub async fn serve(
    project_dir: PathBuf,
    bind: SocketAddr,
    ui_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let project = Project::open(project_dir).map_err(std::io::Error::other)?;
    let app = router(AppState::new(project, ui_dir));
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Runs blocking project work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

async fn get_project(State(s): State<Shared>) -> ApiResult<Json<Value>> {
    let p = s.project.clone();
    blocking(move || Ok(Json(to_value(&p.manifest()?)))).await
}

async fn get_labels(State(s): State<Shared>) -> ApiResult<Json<Vec<String>>> {
    let p = s.project.clone();
    blocking(move || Ok(Json(p.labels()?))).await
}

async fn get_trend(State(s): State<Shared>) -> ApiResult<Json<Value>> {
    let p = s.project.clone();
    blocking(move || Ok(Json(to_value(&p.trend_report()?)))).await
}

async fn get_batch(State(s): State<Shared>, Path(i): Path<usize>) -> ApiResult<Json<Value>> {
    let p = s.project.clone();
    blocking(move || {
        let m = p.manifest()?;
        let b = m
            .batch(i)
            .ok_or_else(|| ApiError::not_found(format!("no batch {i}")))?;
        Ok(Json(to_value(b)))
    })
    .await
}

async fn get_batch_sentences(
    State(s): State<Shared>,
    Path(i): Path<usize>,
) -> ApiResult<Json<Vec<SentenceView>>> {
    let p = s.project.clone();
    blocking(move || {
        let m = p.manifest()?;
        let b = m
            .batch(i)
            .ok_or_else(|| ApiError::not_found(format!("no batch {i}")))?;
        let working = p.working_copy(i)?;
        let pseudo = p.pseudo(i)?;
        Ok(Json(
            working
                .sentences
                .iter()
                .zip(&pseudo.sentences)
                .map(|(w, ps)| {
                    views::sentence_view(i, b.state, w, Some(ps), &m.settings.misc_orig_key)
                })
                .collect(),
        ))
    })
    .await
}

#[derive(Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn get_report(
    State(s): State<Shared>,
    Path(i): Path<usize>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    let p = s.project.clone();
    let report = blocking(move || {
        let m = p.manifest()?;
        let b = m
            .batch(i)
            .ok_or_else(|| ApiError::not_found(format!("no batch {i}")))?;
        b.report.clone().ok_or_else(|| {
            ApiError::new(
                StatusCode::CONFLICT,
                "no_report",
                format!("batch {i} is not finalized"),
            )
        })
    })
    .await?;
    Ok(match q.format.as_deref() {
        Some("csv") => (
            [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
            report.confusion.to_csv(),
        )
            .into_response(),
        None | Some("json") => Json(report).into_response(),
        Some(other) => return Err(ApiError::bad_request(format!("unknown format {other:?}"))),
    })
}

fn sentence_lookup(p: &Project, sid: &str) -> ApiResult<SentenceView> {
    let m = p.manifest()?;
    let i = p
        .batch_of(sid)?
        .ok_or_else(|| ApiError::not_found(format!("sentence {sid:?} is in no batch")))?;
    let b = m.batch(i).expect("batch_of returns existing batches");
    let working = p.working_copy(i)?;
    let pseudo = p.pseudo(i)?;
    let w = working.find(sid).expect("listed in batch");
    Ok(views::sentence_view(
        i,
        b.state,
        w,
        pseudo.find(sid),
        &m.settings.misc_orig_key,
    ))
}

async fn get_sentence(
    State(s): State<Shared>,
    Path(sid): Path<String>,
) -> ApiResult<Json<SentenceView>> {
    let p = s.project.clone();
    blocking(move || sentence_lookup(&p, &sid).map(Json)).await
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenPatch {
    pub head: Option<usize>,
    pub deprel: Option<String>,
    pub upos: Option<String>,
}

async fn patch_token(
    State(s): State<Shared>,
    Path((sid, tid)): Path<(String, usize)>,
    headers: HeaderMap,
    Json(body): Json<TokenPatch>,
) -> ApiResult<Json<SentenceView>> {
    let annotator = headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|v| !v.is_empty())
        .unwrap_or("anonymous")
        .to_string();
    let p = s.project.clone();
    blocking(move || {
        let i = p
            .batch_of(&sid)?
            .ok_or_else(|| ApiError::not_found(format!("sentence {sid:?} is in no batch")))?;
        let edit = TokenEdit {
            token_id: tid,
            head: body.head,
            deprel: body.deprel,
            upos: body.upos,
        };
        p.submit_correction(i, &sid, &[edit], &annotator)?;
        sentence_lookup(&p, &sid).map(Json)
    })
    .await
}

fn idempotency_key(headers: &HeaderMap, scope: &str) -> Option<String> {
    headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(|k| format!("{scope}\n{k}"))
}

fn replay_idempotent(s: &AppState, key: &Option<String>) -> Option<Response> {
    let key = key.as_ref()?;
    let stored = s
        .idempotent
        .lock()
        .expect("idempotency table")
        .get(key)
        .cloned()?;
    let status = StatusCode::from_u16(stored.0).unwrap_or(StatusCode::OK);
    Some((status, Json(stored.1)).into_response())
}

fn remember(s: &AppState, key: Option<String>, status: StatusCode, body: &Value) {
    if let Some(k) = key {
        s.idempotent
            .lock()
            .expect("idempotency table")
            .insert(k, (status.as_u16(), body.clone()));
    }
}

async fn post_finalize(
    State(s): State<Shared>,
    Path(i): Path<usize>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let key = idempotency_key(&headers, &format!("finalize/{i}"));
    if let Some(r) = replay_idempotent(&s, &key) {
        return Ok(r);
    }
    let p = s.project.clone();
    let report = blocking(move || Ok(p.finalize_batch(i)?)).await?;
    let body = to_value(&report);
    remember(&s, key, StatusCode::OK, &body);
    Ok((StatusCode::OK, Json(body)).into_response())
}

fn accepted(job: &Job) -> Value {
    json!({ "job": job, "status_url": format!("/api/jobs/{}", job.id) })
}

async fn post_finetune(
    State(s): State<Shared>,
    Path(i): Path<usize>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let key = idempotency_key(&headers, &format!("finetune/{i}"));
    if let Some(r) = replay_idempotent(&s, &key) {
        return Ok(r);
    }
    let p = s.project.clone();
    let job = s
        .jobs
        .start("finetune", move || Ok(to_value(&p.finetune_step(i)?)))?;
    let body = accepted(&job);
    remember(&s, key, StatusCode::ACCEPTED, &body);
    Ok((StatusCode::ACCEPTED, Json(body)).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NextBatchRequest {
    /// Hand-picked batch membership instead of seeded sampling.
    pub sentence_ids: Option<Vec<String>>,
}

async fn post_next_batch(
    State(s): State<Shared>,
    body: Option<Json<NextBatchRequest>>,
) -> ApiResult<Response> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let p = s.project.clone();
    let job = s.jobs.start("next_batch", move || {
        Ok(to_value(&p.next_batch(req.sentence_ids.as_deref())?))
    })?;
    Ok((StatusCode::ACCEPTED, Json(accepted(&job))).into_response())
}

async fn get_job(State(s): State<Shared>, Path(id): Path<u64>) -> ApiResult<Json<Job>> {
    s.jobs
        .get(id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no job {id}")))
}

async fn get_agreement(
    State(s): State<Shared>,
    Path(study): Path<String>,
) -> ApiResult<Json<Value>> {
    if study.is_empty() || study.contains(['/', '\\']) || study.starts_with('.') {
        return Err(ApiError::bad_request("invalid study name"));
    }
    let p = s.project.clone();
    blocking(move || {
        let dir = p.dir().join("agreement").join(&study);
        if !dir.is_dir() {
            return Err(ApiError::not_found(format!("no agreement study {study:?}")));
        }
        let opts = p.manifest()?.eval_options();
        let st = AgreementStudy::load(&dir)?;
        let report = agreement::agreement_report(&st, &opts)?;
        let rows = agreement::list_disagreements(&st, &opts)?;
        Ok(Json(json!({
            "study": study,
            "sentence_ids": st.sentence_ids,
            "report": report,
            "disagreements": rows,
            "adjudicated": st.adjudicated.is_some(),
        })))
    })
    .await
}
