//! The `/v1` JSON service and static UI hosting.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bfsurf::design::HyperBox;
use bfsurf::reg_bf::RegressionHypers;
use bfsurf::surface::{ExportFormat, SweepManifest};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tower_http::services::ServeDir;

use crate::artifacts::{self, content_type, json_bytes};
use crate::error::{AppError, Result};
use crate::jobs::{JobKind, JobOutput, JobStatus, JobStore};
use crate::schema::{BfRequest, FitRequest, PredictRequest, SimulateRequest, SlicesRequest, SurfaceRequest};

/// Service configuration; the CLI fills it from flags and `BFSURF_*`
/// variables.
#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub workers: usize,
    pub static_dir: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<JobStore>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = match &self {
            AppError::Invalid { .. } | AppError::Compute(bfsurf::Error::Parse { .. }) => StatusCode::BAD_REQUEST,
            AppError::NotFound(_) => StatusCode::NOT_FOUND,
            AppError::NotReady { .. } => StatusCode::CONFLICT,
            AppError::JobFailed { .. } | AppError::Compute(_) => StatusCode::UNPROCESSABLE_ENTITY,
            AppError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let field = match &self {
            AppError::Compute(bfsurf::Error::Parse { .. }) => Some("data"),
            other => other.field(),
        };
        let body = ErrorBody {
            error: self.to_string(),
            field,
        };
        (status, Json(body)).into_response()
    }
}

/// JSON body extractor whose errors name the offending field.
pub struct ApiJson<T>(pub T);

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = AppError;

    async fn from_request(req: Request, state: &S) -> std::result::Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| AppError::invalid("body", e.body_text()))?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        serde_path_to_error::deserialize(de).map(ApiJson).map_err(|e| {
            let path = e.path().to_string();
            let message = e.inner().to_string();
            let field = match (path.as_str(), missing_field(&message)) {
                (".", Some(f)) => f.to_string(),
                (".", None) => "body".to_string(),
                (p, Some(f)) => format!("{p}.{f}"),
                (p, None) => p.to_string(),
            };
            AppError::invalid(&field, message)
        })
    }
}

fn artifact(bytes: Vec<u8>, format: ExportFormat) -> Response {
    ([(header::CONTENT_TYPE, content_type(format))], bytes).into_response()
}

/// Runs `f` on the shared worker pool off the async executor.
async fn compute<T, F>(store: &Arc<JobStore>, f: F) -> Result<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T> + Send + 'static,
{
    let store = Arc::clone(store);
    tokio::task::spawn_blocking(move || store.pool().install(f))
        .await
        .map_err(|e| AppError::io("worker", std::io::Error::other(e)))?
}

async fn simulate(State(s): State<AppState>, ApiJson(req): ApiJson<SimulateRequest>) -> Result<Response> {
    let format = req.format;
    let bytes = compute(&s.store, move || artifacts::simulate(&req)).await?;
    Ok(artifact(bytes, format))
}

async fn bf(State(s): State<AppState>, ApiJson(req): ApiJson<BfRequest>) -> Result<Response> {
    let bytes = compute(&s.store, move || json_bytes(&artifacts::bf(&req)?)).await?;
    Ok(artifact(bytes, ExportFormat::Json))
}

async fn surface(State(s): State<AppState>, ApiJson(req): ApiJson<SurfaceRequest>) -> Result<Response> {
    let id = JobStore::job_id(JobKind::Sweep, &req)?;
    let request = json_bytes(&req)?;
    if let Some(r) = s.store.get(&id).filter(|r| r.status != JobStatus::Failed) {
        return Ok((StatusCode::ACCEPTED, Json(r)).into_response());
    }
    let prepared = compute(&s.store, move || artifacts::prepare_surface(&req)).await?;
    let total = prepared.evaluations();
    let record = s.store.submit(JobKind::Sweep, id, &request, total, move |progress| {
        let out = prepared.run(Some(progress))?;
        Ok(JobOutput {
            bytes: out.bytes,
            format: prepared.format,
            sidecars: vec![("manifest.json".into(), json_bytes(&out.manifest)?)],
        })
    })?;
    Ok((StatusCode::ACCEPTED, Json(record)).into_response())
}

async fn job(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let record = s.store.get(&id).ok_or_else(|| AppError::NotFound(format!("job {id}")))?;
    Ok(Json(record).into_response())
}

async fn job_result(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let (record, bytes) = s.store.result(&id)?;
    Ok(artifact(bytes, record.format.unwrap_or(ExportFormat::Json)))
}

async fn slices(State(s): State<AppState>, ApiJson(req): ApiJson<SlicesRequest>) -> Result<Response> {
    let format = req.format;
    let bytes = compute(&s.store, move || artifacts::slices(&req)).await?;
    Ok(artifact(bytes, format))
}

/// The samples and box a fit request refers to.
fn fit_inputs(store: &JobStore, req: &FitRequest) -> Result<(HyperBox, Vec<u8>, ExportFormat)> {
    match (&req.job_id, &req.surface_csv) {
        (Some(job), None) => {
            if req.box_spec.is_some() {
                return Err(AppError::invalid("box", "a sweep job already fixes the box"));
            }
            let (record, bytes) = store.result(job)?;
            if record.kind != JobKind::Sweep {
                return Err(AppError::invalid("job_id", "not a sweep job"));
            }
            let manifest: SweepManifest =
                serde_json::from_slice(&store.file(job, "manifest.json")?).map_err(bfsurf::Error::from)?;
            Ok((manifest.design.bbox, bytes, record.format.unwrap_or(ExportFormat::Csv)))
        }
        (None, Some(text)) => {
            let spec = req
                .box_spec
                .as_deref()
                .ok_or_else(|| AppError::invalid("box", "surface_csv needs a box"))?;
            let (bbox, _) = HyperBox::parse(spec)?;
            Ok((bbox, text.clone().into_bytes(), ExportFormat::Csv))
        }
        _ => Err(AppError::invalid("job_id", "give exactly one of job_id or surface_csv")),
    }
}

async fn surrogate_fit(State(s): State<AppState>, ApiJson(req): ApiJson<FitRequest>) -> Result<Response> {
    let (bbox, bytes, format) = fit_inputs(&s.store, &req)?;
    let (dims, samples) = artifacts::load_surface(&bytes, format)?;
    let id = JobStore::job_id(JobKind::Fit, &req)?;
    let request = json_bytes(&req)?;
    let het = req.het;
    let record = s.store.submit(JobKind::Fit, id, &request, 0, move |_| {
        Ok(JobOutput {
            bytes: artifacts::fit(&bbox, &dims, &samples, het)?,
            format: ExportFormat::Json,
            sidecars: Vec::new(),
        })
    })?;
    Ok((StatusCode::ACCEPTED, Json(record)).into_response())
}

async fn surrogate_predict(State(s): State<AppState>, ApiJson(req): ApiJson<PredictRequest>) -> Result<Response> {
    let text = match (&req.fit_job, &req.fit) {
        (Some(job), None) => {
            let (record, bytes) = s.store.result(job)?;
            if record.kind != JobKind::Fit {
                return Err(AppError::invalid("fit_job", "not a fit job"));
            }
            String::from_utf8(bytes).map_err(|e| AppError::invalid("fit_job", e.to_string()))?
        }
        (None, Some(doc)) => doc.to_string(),
        _ => return Err(AppError::invalid("fit_job", "give exactly one of fit_job or fit")),
    };
    let format = req.format;
    let bytes = compute(&s.store, move || {
        let fit = artifacts::parse_fit(&text)?;
        let points = artifacts::query_points(&fit, req.grid.as_deref(), req.points.as_deref())?;
        artifacts::predict(&fit, &points, format)
    })
    .await?;
    Ok(artifact(bytes, format))
}

fn query_f64(q: &HashMap<String, String>, name: &str, default: f64) -> Result<f64> {
    match q.get(name) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| AppError::invalid(name, format!("not a number: {v:?}"))),
    }
}

async fn priors_density(Query(q): Query<HashMap<String, String>>) -> Result<Response> {
    let hypers = RegressionHypers {
        mu: query_f64(&q, "mu", 0.0)?,
        phi: query_f64(&q, "phi", 1.0)?,
        a: query_f64(&q, "a", 1.0)?,
        b: query_f64(&q, "b", 1.0)?,
    };
    let points = match q.get("points") {
        None => 201,
        Some(v) => v
            .parse()
            .map_err(|_| AppError::invalid("points", format!("not a count: {v:?}")))?,
    };
    let doc = artifacts::prior_density(&hypers, points)?;
    Ok(artifact(json_bytes(&doc)?, ExportFormat::Json))
}

async fn unknown_endpoint() -> AppError {
    AppError::NotFound("no such endpoint".into())
}

/// The `/v1` API plus, when `static_dir` is set, the UI bundle under `/`.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/simulate", post(simulate))
        .route("/bf", post(bf))
        .route("/surface", post(surface))
        .route("/jobs/{id}", get(job))
        .route("/jobs/{id}/result", get(job_result))
        .route("/hlm/slices", post(slices))
        .route("/surrogate/fit", post(surrogate_fit))
        .route("/surrogate/predict", post(surrogate_predict))
        .route("/priors/density", get(priors_density))
        .fallback(unknown_endpoint)
        .with_state(state);
    let app = Router::new().nest("/v1", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// The UI bundle shipped with the crate.
pub fn bundled_static_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/static"))
}

/// Binds and serves until interrupted.
pub async fn serve(config: ServeConfig) -> Result<()> {
    let store = JobStore::open(&config.data_dir, config.workers)?;
    let static_dir = config
        .static_dir
        .clone()
        .or_else(|| Some(bundled_static_dir()).filter(|d| d.is_dir()));
    let app = router(AppState { store }, static_dir);
    let addr: SocketAddr = format!("{}:{}", config.host, config.port)
        .parse()
        .map_err(|e| AppError::invalid("host", format!("{e}")))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| AppError::io(format!("binding {addr}"), e))?;
    eprintln!("bfsurf listening on http://{addr} (data in {})", config.data_dir.display());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| AppError::io("serving", e))
}
