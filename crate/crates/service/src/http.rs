//! JSON routes over [`SessionService`].
//!
//! Engine steps may block on a remote backend, so they run on the blocking
//! thread pool.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::{ServeDir, ServeFile};

use scriptalign_core::transcript::Condition;
use scriptalign_core::UserInput;

use crate::service::{ServiceError, SessionService, TranscriptFilter};
use crate::survey::SurveySubmission;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub retriable: bool,
}

pub fn status_of(err: &ServiceError) -> StatusCode {
    match err {
        ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
        ServiceError::UnknownTopic(_)
        | ServiceError::UnknownBackend(_)
        | ServiceError::InvalidOption(_)
        | ServiceError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
        ServiceError::Range(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ServiceError::SessionComplete | ServiceError::Conflict(_) | ServiceError::Busy => StatusCode::CONFLICT,
        ServiceError::Backend(e) if e.is_retriable() => StatusCode::SERVICE_UNAVAILABLE,
        ServiceError::Backend(_) => StatusCode::BAD_GATEWAY,
        ServiceError::Engine(_) | ServiceError::Store(_) | ServiceError::ReplayDiverged { .. } => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
    }
}

pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.0.code().to_string(),
            message: self.0.to_string(),
            retriable: self.0.retriable(),
        };
        (status_of(&self.0), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::InvalidRequest(format!("bad request body: {e}")))
}

fn parse_condition(raw: &str) -> Result<Condition, ServiceError> {
    raw.parse().map_err(ServiceError::InvalidRequest)
}

async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Engine(format!("step task failed: {e}")))?
}

#[derive(Debug, Deserialize)]
struct CreateBody {
    condition: String,
    topic_id: String,
    #[serde(default)]
    backend: Option<String>,
}

#[derive(Debug, Deserialize)]
struct MessageBody {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    option_id: Option<String>,
}

impl MessageBody {
    fn into_input(self) -> Result<UserInput, ServiceError> {
        match (self.text, self.option_id) {
            (Some(t), None) => Ok(UserInput::Text(t)),
            (None, Some(o)) => Ok(UserInput::OptionId(o)),
            _ => Err(ServiceError::InvalidRequest(
                "send exactly one of `text` or `option_id`".into(),
            )),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ConditionQuery {
    condition: Option<String>,
    topic_id: Option<String>,
}

impl ConditionQuery {
    fn condition(&self) -> Result<Option<Condition>, ServiceError> {
        self.condition.as_deref().map(parse_condition).transpose()
    }
}

async fn create_session(State(svc): State<Arc<SessionService>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateBody = parse_body(&body)?;
    let condition = parse_condition(&req.condition)?;
    let created = blocking(move || svc.create_session(condition, &req.topic_id, req.backend.as_deref())).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn post_message(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let input = parse_body::<MessageBody>(&body)?.into_input()?;
    let turn = blocking(move || svc.post_message(&id, input)).await?;
    Ok(Json(turn).into_response())
}

async fn get_session(State(svc): State<Arc<SessionService>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.get_session(&id)?).into_response())
}

async fn submit_survey(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let submission: SurveySubmission = parse_body(&body)?;
    let response = blocking(move || svc.submit_survey(&id, submission)).await?;
    Ok((StatusCode::CREATED, Json(response)).into_response())
}

async fn topics(State(svc): State<Arc<SessionService>>) -> Response {
    Json(svc.topics()).into_response()
}

async fn instruments(State(svc): State<Arc<SessionService>>) -> Response {
    Json(svc.instruments().to_vec()).into_response()
}

async fn metrics(State(svc): State<Arc<SessionService>>, Query(q): Query<ConditionQuery>) -> ApiResult<Response> {
    let condition = q.condition()?;
    Ok(Json(svc.metrics(condition)?).into_response())
}

async fn transcripts(State(svc): State<Arc<SessionService>>, Query(q): Query<ConditionQuery>) -> ApiResult<Response> {
    let filter = TranscriptFilter {
        condition: q.condition()?,
        topic_id: q.topic_id,
    };
    Ok(Json(svc.export_transcripts(&filter)).into_response())
}

async fn healthz(State(svc): State<Arc<SessionService>>) -> Response {
    Json(serde_json::json!({
        "status": "ok",
        "sessions": svc.session_count(),
        "topics": svc.library().len(),
        "backends": svc.backend_names(),
    }))
    .into_response()
}

async fn api_not_found() -> ApiError {
    ApiError(ServiceError::NotFound("no such endpoint".into()))
}

/// All API routes, plus the built UI from `static_dir` under `/` when given.
pub fn router(service: Arc<SessionService>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/messages", post(post_message))
        .route("/sessions/:id/survey", post(submit_survey))
        .route("/topics", get(topics))
        .route("/instruments", get(instruments))
        .route("/metrics", get(metrics))
        .route("/transcripts", get(transcripts))
        .route("/healthz", get(healthz))
        .fallback(api_not_found)
        .with_state(service);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            app.fallback_service(ServeDir::new(dir).not_found_service(ServeFile::new(index)))
        }
        None => app,
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(service: Arc<SessionService>, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(service, static_dir)).await
}
