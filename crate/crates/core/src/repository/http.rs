//! JSON/HTTP interface of the repository.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/health` | liveness |
//! | GET | `/api/printers` | printers and materials |
//! | GET | `/api/models?q=&printer=&material=` | search with preview |
//! | POST | `/api/models` | multipart upload: `stl`, `name`, `tags`, `share`, `printer`, `material` |
//! | GET | `/api/models/{id}` | index entry |
//! | GET | `/api/models/{id}/metadata?printer=&material=` | stored document |
//! | GET | `/api/models/{id}/download?printer=&material=` | zip of `model.stl` + `meta.json` |
//! | POST | `/api/models/{id}/results?printer=&material=` | upload sliced cells |
//! | POST | `/api/models/{id}/slice` | start a slicing batch |
//! | GET | `/api/batches/{id}` | batch progress |

use std::net::SocketAddr;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{AddModel, CellRecord, MetadataDocument, Repository, RepositoryError, SliceSelection};
use crate::grid::CellIndex;
use crate::orchestrator::{BatchId, BatchStatus, OrchestratorError, POLL_INTERVAL};

/// Largest accepted request body.
pub const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;
/// Response header telling whether a download carried a stored document.
pub const METADATA_HEADER: &str = "x-slicehub-metadata";

pub fn router(repo: Repository) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/printers", get(catalog))
        .route("/api/models", get(search).post(add_model))
        .route("/api/models/{id}", get(model))
        .route("/api/models/{id}/metadata", get(metadata))
        .route("/api/models/{id}/download", get(download))
        .route("/api/models/{id}/results", post(upload_results))
        .route("/api/models/{id}/slice", post(start_slice))
        .route("/api/batches/{id}", get(batch_status))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(repo)
}

/// Serves the API until the process is stopped.
pub async fn serve(repo: Repository, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(repo)).await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: message.into() }
    }
}

impl From<RepositoryError> for ApiError {
    fn from(e: RepositoryError) -> Self {
        use RepositoryError as E;
        let status = match &e {
            E::UnknownModel(_) | E::Orchestrator(OrchestratorError::UnknownBatch(_)) => StatusCode::NOT_FOUND,
            E::RejectedInterpolated => StatusCode::UNPROCESSABLE_ENTITY,
            E::NothingToSlice => StatusCode::CONFLICT,
            E::Io(_) | E::Archive(_) => StatusCode::INTERNAL_SERVER_ERROR,
            E::Geometry(_)
            | E::UnknownPrinter(_)
            | E::UnknownMaterial(_)
            | E::InvalidId(_)
            | E::InvalidDocument(_)
            | E::Grid(_)
            | E::Interpolation(_)
            | E::Orchestrator(_) => StatusCode::BAD_REQUEST,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{e}");
        }
        Self { status, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, RepositoryError> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map_err(ApiError::from),
        Err(e) => Err(ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: e.to_string() }),
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct ComboQuery {
    #[serde(default)]
    pub printer: String,
    #[serde(default)]
    pub material: String,
}

#[derive(Debug, Default, Deserialize)]
pub struct SearchQuery {
    #[serde(default)]
    pub q: String,
    #[serde(default)]
    pub printer: String,
    #[serde(default)]
    pub material: String,
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn catalog(State(repo): State<Repository>) -> Json<super::Catalog> {
    Json(repo.catalog().clone())
}

async fn search(State(repo): State<Repository>, Query(q): Query<SearchQuery>) -> ApiResult<impl IntoResponse> {
    let hits = blocking(move || repo.search(&q.q, &q.printer, &q.material)).await?;
    Ok(Json(hits))
}

async fn model(State(repo): State<Repository>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let entry = repo.entry(&id).ok_or(RepositoryError::UnknownModel(id))?;
    Ok(Json(entry))
}

async fn metadata(
    State(repo): State<Repository>,
    Path(id): Path<String>,
    Query(q): Query<ComboQuery>,
) -> ApiResult<impl IntoResponse> {
    if repo.entry(&id).is_none() {
        return Err(RepositoryError::UnknownModel(id).into());
    }
    let doc = blocking(move || repo.document(&id, &q.printer, &q.material)).await?;
    match doc {
        Some(doc) => Ok(Json(doc)),
        None => Err(ApiError { status: StatusCode::NOT_FOUND, message: "no metadata for this printer and material".into() }),
    }
}

async fn add_model(State(repo): State<Repository>, mut multipart: Multipart) -> ApiResult<Response> {
    let mut request = AddModel { share: true, ..Default::default() };
    let mut got_stl = false;
    while let Some(field) = multipart.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_owned();
        match name.as_str() {
            "stl" | "file" => {
                request.stl = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?.to_vec();
                got_stl = true;
            }
            _ => {
                let text = field.text().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                match name.as_str() {
                    "name" => request.name = text.trim().to_owned(),
                    "tags" => request.tags = split_tags(&text),
                    "share" => request.share = parse_flag(&text)?,
                    "printer" => request.printer_id = Some(text.trim().to_owned()),
                    "material" => request.material_id = Some(text.trim().to_owned()),
                    _ => {}
                }
            }
        }
    }
    if !got_stl {
        return Err(ApiError::bad_request("missing field `stl`"));
    }
    let outcome = blocking(move || repo.add_model(request)).await?;
    let status = if outcome.created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(outcome)).into_response())
}

fn split_tags(text: &str) -> Vec<String> {
    text.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

fn parse_flag(text: &str) -> ApiResult<bool> {
    match text.trim().to_ascii_lowercase().as_str() {
        "" | "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(ApiError::bad_request(format!("invalid boolean {other:?}"))),
    }
}

async fn download(
    State(repo): State<Repository>,
    Path(id): Path<String>,
    Query(q): Query<ComboQuery>,
) -> ApiResult<Response> {
    let name = id.clone();
    let download = blocking(move || repo.download(&id, &q.printer, &q.material)).await?;
    let disposition = HeaderValue::from_str(&format!("attachment; filename=\"{name}.zip\""))
        .unwrap_or(HeaderValue::from_static("attachment"));
    let flag = HeaderValue::from_static(if download.has_metadata { "present" } else { "missing" });
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("application/zip")),
            (header::CONTENT_DISPOSITION, disposition),
            (header::HeaderName::from_static(METADATA_HEADER), flag),
        ],
        Bytes::from(download.zip),
    )
        .into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UploadBody {
    pub cells: Vec<CellRecord>,
}

async fn upload_results(
    State(repo): State<Repository>,
    Path(id): Path<String>,
    Query(q): Query<ComboQuery>,
    Json(body): Json<UploadBody>,
) -> ApiResult<Json<MetadataDocument>> {
    let doc = blocking(move || repo.upload_results(&id, &q.printer, &q.material, &body.cells)).await?;
    Ok(Json(doc))
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct SliceBody {
    #[serde(default)]
    pub printer: String,
    #[serde(default)]
    pub material: String,
    #[serde(default)]
    pub cells: Option<Vec<CellIndex>>,
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default = "default_share")]
    pub share: bool,
}

fn default_share() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SliceStarted {
    pub batch_id: BatchId,
    pub poll_interval_s: f64,
}

async fn start_slice(
    State(repo): State<Repository>,
    Path(id): Path<String>,
    Json(body): Json<SliceBody>,
) -> ApiResult<(StatusCode, Json<SliceStarted>)> {
    let selection = match (body.cells, body.fraction) {
        (Some(cells), None) => SliceSelection::Cells(cells),
        (None, Some(f)) => SliceSelection::Fraction(f),
        _ => return Err(ApiError::bad_request("give exactly one of `cells` or `fraction`")),
    };
    let batch_id = blocking(move || {
        repo.start_slice(&id, &body.printer, &body.material, &selection, body.parallelism, body.share)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(SliceStarted { batch_id, poll_interval_s: POLL_INTERVAL.as_secs_f64() })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchView {
    #[serde(flatten)]
    pub status: BatchStatus,
    /// Merged document of an unshared batch, once finished.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document: Option<MetadataDocument>,
}

async fn batch_status(State(repo): State<Repository>, Path(id): Path<u64>) -> ApiResult<Json<BatchView>> {
    let id = BatchId(id);
    let status = repo.orchestrator().status(id).map_err(RepositoryError::from)?;
    let document = if status.finished { repo.private_document(id) } else { None };
    Ok(Json(BatchView { status, document }))
}
