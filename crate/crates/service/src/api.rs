//! HTTP routes.

use std::io::Write;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, Utc};
use futures_util::StreamExt;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use somnoline_core::edf::NightManifest;
use somnoline_pipeline::{
    BundleKind, JobKind, JobMessage, ProcessComplete, QueueError, QueueStats, SplitComplete,
    SplitStarted, Storage,
};

use crate::auth::{constant_time_eq, AuthError, Role, User};
use crate::platform::{CallbackError, Platform};
use crate::records::{RecordError, UploadRecord};

pub const INTERNAL_SECRET_HEADER: &str = "x-internal-secret";
pub const FILE_NAME_HEADER: &str = "x-file-name";
pub const MANIFEST_HEADER: &str = "x-night-manifest";
/// Lets an admin upload on behalf of a center.
pub const CENTER_HEADER: &str = "x-center-id";

#[derive(Debug, Error)]
pub enum ApiError {
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("forbidden")]
    Forbidden,
    #[error("not found")]
    NotFound,
    #[error("night {0} is not ready")]
    NotReady(usize),
    #[error("empty upload")]
    EmptyUpload,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Callback(#[from] CallbackError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("storage failure: {0}")]
    Storage(#[from] std::io::Error),
}

impl From<RecordError> for ApiError {
    fn from(e: RecordError) -> Self {
        ApiError::Callback(CallbackError::Record(e))
    }
}

impl ApiError {
    fn parts(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::Auth(AuthError::InvalidCredentials) => (StatusCode::UNAUTHORIZED, "invalid_credentials"),
            ApiError::Auth(AuthError::ExpiredToken) => (StatusCode::UNAUTHORIZED, "expired_token"),
            ApiError::Auth(AuthError::Unauthenticated) => (StatusCode::UNAUTHORIZED, "unauthenticated"),
            ApiError::Auth(AuthError::UsersFile(_)) => (StatusCode::INTERNAL_SERVER_ERROR, "users_file"),
            ApiError::Forbidden => (StatusCode::FORBIDDEN, "forbidden"),
            ApiError::NotFound => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::NotReady(_) => (StatusCode::CONFLICT, "not_ready"),
            ApiError::EmptyUpload => (StatusCode::BAD_REQUEST, "empty_upload"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::Callback(CallbackError::Record(RecordError::UnknownRecording(_))) => {
                (StatusCode::NOT_FOUND, "unknown_recording")
            }
            ApiError::Callback(CallbackError::Record(RecordError::IllegalTransition { .. })) => {
                (StatusCode::CONFLICT, "illegal_transition")
            }
            ApiError::Callback(CallbackError::BundlesMissing { .. }) => (StatusCode::CONFLICT, "bundles_missing"),
            ApiError::Callback(CallbackError::Record(_)) => (StatusCode::INTERNAL_SERVER_ERROR, "storage_failure"),
            ApiError::Queue(QueueError::UnknownJob(_)) => (StatusCode::CONFLICT, "unknown_job"),
            ApiError::Queue(QueueError::InvalidMessage(_)) => (StatusCode::BAD_REQUEST, "invalid_message"),
            ApiError::Queue(_) => (StatusCode::INTERNAL_SERVER_ERROR, "queue_failure"),
            ApiError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage_failure"),
        }
    }
}

/// Error body: `{"error": code, "message": text}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.parts();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = ErrorBody {
            error: code.into(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = Arc<Platform>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("blocking task panicked")
}

/// The user behind a valid bearer token.
pub struct CurrentUser(pub User);

impl FromRequestParts<Shared> for CurrentUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, p: &Shared) -> ApiResult<Self> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(AuthError::Unauthenticated)?;
        let session = p.sessions.resolve(token.trim())?;
        let user = p.users.get(&session.username).ok_or(AuthError::Unauthenticated)?;
        Ok(CurrentUser(user.clone()))
    }
}

impl CurrentUser {
    fn can_see(&self, rec: &UploadRecord) -> bool {
        self.0.role == Role::Admin || self.0.center_id == rec.center_id
    }
}

/// Worker callbacks and queue calls carry the shared internal secret.
pub struct Internal;

impl FromRequestParts<Shared> for Internal {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, p: &Shared) -> ApiResult<Self> {
        let given = parts
            .headers
            .get(INTERNAL_SECRET_HEADER)
            .map(|v| v.as_bytes())
            .unwrap_or_default();
        if constant_time_eq(given, p.internal_secret.as_bytes()) {
            Ok(Internal)
        } else {
            Err(AuthError::Unauthenticated.into())
        }
    }
}

pub fn router(platform: Shared) -> Router {
    Router::new()
        .route("/auth/login", post(login))
        .route(
            "/recordings",
            post(upload).get(list_own).layer(DefaultBodyLimit::disable()),
        )
        .route("/recordings/{id}", get(status))
        .route("/recordings/{id}/nights/{n}/scoring", get(download_scoring))
        .route("/recordings/{id}/nights/{n}/ml", get(download_ml))
        .route("/admin/uploads", get(admin_list))
        .route("/queues/stats", get(queue_stats))
        .route("/internal/split-started", post(cb_split_started))
        .route("/internal/split-complete", post(cb_split_complete))
        .route("/internal/process-complete", post(cb_process_complete))
        .route("/internal/queues/{name}/enqueue", post(q_enqueue))
        .route("/internal/queues/{name}/dequeue", post(q_dequeue))
        .route("/internal/queues/{name}/ack", post(q_ack))
        .route("/internal/queues/{name}/nack", post(q_nack))
        .route("/internal/queues/{name}/stats", get(q_stats))
        .with_state(platform)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub secret: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub expires_at: DateTime<Utc>,
    pub username: String,
    pub center_id: String,
    pub role: Role,
}

async fn login(State(p): State<Shared>, Json(req): Json<LoginRequest>) -> ApiResult<Json<LoginResponse>> {
    let user = p.users.authenticate(&req.username, &req.secret)?.clone();
    let (token, session) = p.sessions.issue(&user.username);
    Ok(Json(LoginResponse {
        token,
        expires_at: session.expires_at,
        username: user.username,
        center_id: user.center_id,
        role: user.role,
    }))
}

fn header_str<'a>(headers: &'a HeaderMap, name: &str) -> ApiResult<Option<&'a str>> {
    headers
        .get(name)
        .map(|v| v.to_str().map_err(|_| ApiError::BadRequest(format!("{name} is not text"))))
        .transpose()
}

/// Streams the body to storage, records the upload and queues its split job.
async fn upload(
    State(p): State<Shared>,
    user: CurrentUser,
    headers: HeaderMap,
    body: Body,
) -> ApiResult<(StatusCode, Json<UploadRecord>)> {
    let center = match header_str(&headers, CENTER_HEADER)? {
        Some(c) if c != user.0.center_id && user.0.role != Role::Admin => return Err(ApiError::Forbidden),
        Some(c) if c.trim().is_empty() => return Err(ApiError::BadRequest("empty center".into())),
        Some(c) => c.to_owned(),
        None => user.0.center_id.clone(),
    };
    let file_name = header_str(&headers, FILE_NAME_HEADER)?.map(str::to_owned);
    let manifest = header_str(&headers, MANIFEST_HEADER)?
        .map(|m| {
            NightManifest::from_json(m)
                .map(|_| m.to_owned())
                .map_err(|e| ApiError::BadRequest(e.to_string()))
        })
        .transpose()?;

    let rid = format!("r{}", hex::encode(rand::rng().random::<[u8; 8]>()));
    let upload_ref = Storage::upload_ref(&rid);
    let mut pending = p.storage.create_pending(&upload_ref)?;
    let (tx, mut rx) = tokio::sync::mpsc::channel::<Bytes>(16);
    let writer = tokio::task::spawn_blocking(move || -> std::io::Result<Option<u64>> {
        while let Some(chunk) = rx.blocking_recv() {
            pending.write_all(&chunk)?;
        }
        let size = pending.written();
        if size == 0 {
            return Ok(None);
        }
        pending.commit()?;
        Ok(Some(size))
    });
    let mut stream = body.into_data_stream();
    let mut read_error = None;
    while let Some(chunk) = stream.next().await {
        match chunk {
            Ok(bytes) => {
                if tx.send(bytes).await.is_err() {
                    break;
                }
            }
            Err(e) => {
                read_error = Some(e);
                break;
            }
        }
    }
    drop(tx);
    if let Some(e) = read_error {
        // the pending file is dropped unpersisted with the writer
        writer.abort();
        return Err(ApiError::BadRequest(format!("upload interrupted: {e}")));
    }
    let size = writer.await.expect("writer task")?.ok_or(ApiError::EmptyUpload)?;

    let now = p.clock.now();
    let rec = UploadRecord::new(&rid, &center, &user.0.username, file_name, size, now);
    let job = JobMessage::split(&rid, &upload_ref, now);
    let p2 = p.clone();
    let rec = blocking(move || -> ApiResult<UploadRecord> {
        if let Some(m) = manifest {
            p2.storage.write_atomic(&Storage::manifest_ref(&rid), m.as_bytes())?;
        }
        p2.records.insert(rec.clone())?;
        if let Err(e) = p2.split_queue.enqueue(job) {
            let now = p2.clock.now();
            p2.records.update(&rid, |r| Ok(((), r.fail("could not queue split job", now))))?;
            return Err(e.into());
        }
        Ok(rec)
    })
    .await?;
    tracing::info!(recording_id = %rec.recording_id, size, center = %rec.center_id, "upload received");
    Ok((StatusCode::CREATED, Json(rec)))
}

async fn list_own(State(p): State<Shared>, user: CurrentUser) -> Json<Vec<UploadRecord>> {
    Json(p.records.list(|r| user.can_see(r)))
}

#[derive(Debug, Deserialize)]
struct CenterFilter {
    center: Option<String>,
}

async fn admin_list(
    State(p): State<Shared>,
    user: CurrentUser,
    Query(filter): Query<CenterFilter>,
) -> ApiResult<Json<Vec<UploadRecord>>> {
    if user.0.role != Role::Admin {
        return Err(ApiError::Forbidden);
    }
    Ok(Json(p.records.list(|r| filter.center.as_ref().is_none_or(|c| &r.center_id == c))))
}

fn visible(p: &Platform, user: &CurrentUser, id: &str) -> ApiResult<UploadRecord> {
    let rec = p.records.get(id).ok_or(ApiError::NotFound)?;
    if !user.can_see(&rec) {
        return Err(ApiError::Forbidden);
    }
    Ok(rec)
}

async fn status(State(p): State<Shared>, user: CurrentUser, Path(id): Path<String>) -> ApiResult<Json<UploadRecord>> {
    visible(&p, &user, &id).map(Json)
}

async fn download_scoring(
    State(p): State<Shared>,
    user: CurrentUser,
    Path((id, n)): Path<(String, usize)>,
) -> ApiResult<Response> {
    download(&p, &user, &id, n, BundleKind::Scoring).await
}

async fn download_ml(
    State(p): State<Shared>,
    user: CurrentUser,
    Path((id, n)): Path<(String, usize)>,
) -> ApiResult<Response> {
    download(&p, &user, &id, n, BundleKind::Ml).await
}

pub fn bundle_file_name(recording_id: &str, night: usize, kind: BundleKind) -> String {
    format!("{recording_id}-night-{night}-{}.tar", kind.as_str())
}

async fn download(p: &Platform, user: &CurrentUser, id: &str, n: usize, kind: BundleKind) -> ApiResult<Response> {
    let rec = visible(p, user, id)?;
    if n >= rec.nights.len() && !rec.nights.is_empty() {
        return Err(ApiError::NotFound);
    }
    if !rec.night_ready(n) {
        return Err(ApiError::NotReady(n));
    }
    let file = tokio::fs::File::open(p.storage.bundle_path(id, n, kind)).await?;
    let len = file.metadata().await?.len();
    let headers = [
        (header::CONTENT_TYPE, "application/x-tar".to_owned()),
        (header::CONTENT_LENGTH, len.to_string()),
        (
            header::CONTENT_DISPOSITION,
            format!("attachment; filename=\"{}\"", bundle_file_name(id, n, kind)),
        ),
    ];
    let body = Body::from_stream(tokio_util::io::ReaderStream::new(file));
    Ok((headers, body).into_response())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllQueueStats {
    pub split: QueueStats,
    pub process: QueueStats,
}

async fn queue_stats(State(p): State<Shared>, _user: CurrentUser) -> ApiResult<Json<AllQueueStats>> {
    let stats = blocking(move || -> ApiResult<AllQueueStats> {
        Ok(AllQueueStats {
            split: p.split_queue.stats()?,
            process: p.process_queue.stats()?,
        })
    })
    .await?;
    Ok(Json(stats))
}

/// Outcome of a callback; `changed` is false for a repeated delivery.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallbackAck {
    pub changed: bool,
    pub record: UploadRecord,
}

async fn cb_split_started(
    State(p): State<Shared>,
    _: Internal,
    Json(msg): Json<SplitStarted>,
) -> ApiResult<Json<CallbackAck>> {
    let (changed, record) = blocking(move || p.split_started(&msg)).await?;
    Ok(Json(CallbackAck { changed, record }))
}

async fn cb_split_complete(
    State(p): State<Shared>,
    _: Internal,
    Json(msg): Json<SplitComplete>,
) -> ApiResult<Json<CallbackAck>> {
    let (changed, record) = blocking(move || p.split_complete(&msg)).await?;
    Ok(Json(CallbackAck { changed, record }))
}

async fn cb_process_complete(
    State(p): State<Shared>,
    _: Internal,
    Json(msg): Json<ProcessComplete>,
) -> ApiResult<Json<CallbackAck>> {
    let (changed, record) = blocking(move || p.process_complete(&msg)).await?;
    Ok(Json(CallbackAck { changed, record }))
}

fn queue_kind(name: &str) -> ApiResult<JobKind> {
    match name {
        "split" => Ok(JobKind::Split),
        "process" => Ok(JobKind::Process),
        _ => Err(ApiError::NotFound),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DequeueRequest {
    pub lease_s: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRef {
    pub job_id: String,
}

async fn q_enqueue(
    State(p): State<Shared>,
    _: Internal,
    Path(name): Path<String>,
    Json(msg): Json<JobMessage>,
) -> ApiResult<StatusCode> {
    let kind = queue_kind(&name)?;
    blocking(move || p.queue(kind).enqueue(msg)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn q_dequeue(
    State(p): State<Shared>,
    _: Internal,
    Path(name): Path<String>,
    Json(req): Json<DequeueRequest>,
) -> ApiResult<Response> {
    let kind = queue_kind(&name)?;
    if req.lease_s <= 0 {
        return Err(ApiError::BadRequest("lease_s must be positive".into()));
    }
    let job = blocking(move || p.queue(kind).dequeue(Duration::seconds(req.lease_s))).await?;
    Ok(match job {
        Some(job) => Json(job).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn q_ack(
    State(p): State<Shared>,
    _: Internal,
    Path(name): Path<String>,
    Json(job): Json<JobRef>,
) -> ApiResult<StatusCode> {
    let kind = queue_kind(&name)?;
    blocking(move || p.queue(kind).ack(&job.job_id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn q_nack(
    State(p): State<Shared>,
    _: Internal,
    Path(name): Path<String>,
    Json(job): Json<JobRef>,
) -> ApiResult<StatusCode> {
    let kind = queue_kind(&name)?;
    blocking(move || p.queue(kind).nack(&job.job_id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn q_stats(State(p): State<Shared>, _: Internal, Path(name): Path<String>) -> ApiResult<Json<QueueStats>> {
    let kind = queue_kind(&name)?;
    Ok(Json(blocking(move || p.queue(kind).stats()).await?))
}

