//! HTTP facade over the design calculator and the generative models.
//!
//! Endpoints (JSON bodies, see [`wincrt_core::api`] for the shared types):
//!
//! | method | path              | body                 | response                      |
//! |--------|-------------------|----------------------|-------------------------------|
//! | GET    | `/health`         |                      | `{"status":"ok","version"}`   |
//! | POST   | `/power`          | `DesignInputs` + `m` | `DesignResult`                |
//! | POST   | `/samplesize`     | `DesignInputs`       | `DesignResult`                |
//! | POST   | `/contour`        | `ContourRequest`     | `ContourResult`               |
//! | POST   | `/calibrate`      | `CalibrationRequest` | 202 + `JobStatus`             |
//! | GET    | `/calibrate/{id}` |                      | `JobStatus`                   |
//!
//! Malformed bodies and out-of-domain parameters give 400, designs that
//! cannot be evaluated or achieved give 422; both carry an `ErrorBody`.

mod jobs;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::json;
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use wincrt_core::api::{CalibrationRequest, ErrorBody, JobState, JobStatus};
use wincrt_core::design::{self, ContourRequest, ContourResult, DesignInputs, DesignResult};
use wincrt_core::generative::{estimate_design_inputs, EstimationOptions};

use jobs::JobStore;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// How long finished calibration jobs stay retrievable.
    pub job_ttl: Duration,
    pub max_concurrent_jobs: usize,
    /// Upper bounds on calibration Monte Carlo sizes.
    pub max_pair_draws: usize,
    pub max_pool_size: usize,
    pub max_icc_clusters: usize,
    /// Allowed CORS origin; any origin when `None`.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            job_ttl: Duration::from_secs(3600),
            max_concurrent_jobs: 2,
            max_pair_draws: 1_000_000,
            max_pool_size: 40_000,
            max_icc_clusters: 10_000,
            cors_origin: None,
        }
    }
}

impl ServiceConfig {
    fn check_budget(&self, o: &EstimationOptions) -> Result<(), ApiError> {
        for (field, v, max) in [
            ("options.pair_draws", o.pair_draws, self.max_pair_draws),
            ("options.pool_size", o.pool_size, self.max_pool_size),
            ("options.icc_clusters", o.icc_clusters, self.max_icc_clusters),
        ] {
            if v > max {
                return Err(ApiError::field(field, format!("{v} exceeds the service limit {max}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone)]
struct AppState {
    config: Arc<ServiceConfig>,
    jobs: Arc<JobStore>,
    permits: Arc<Semaphore>,
}

/// An error response.
#[derive(Debug)]
pub struct ApiError(pub ErrorBody);

impl ApiError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        ApiError(ErrorBody { field: Some(field.into()), ..ErrorBody::new("invalid_parameter", message) })
    }
}

impl From<wincrt_core::Error> for ApiError {
    fn from(e: wincrt_core::Error) -> Self {
        ApiError(ErrorBody::from(&e))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::BAD_REQUEST);
        (status, Json(self.0)).into_response()
    }
}

/// JSON body with the path of the offending field on failure.
fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let mut b = ErrorBody::new("invalid_request", e.inner().to_string());
        if path != "." {
            b.field = Some(path);
        }
        ApiError(b)
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> wincrt_core::Result<T> + Send + 'static) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => Ok(r?),
        Err(e) => Err(ApiError(ErrorBody::new("internal", format!("worker failed: {e}")))),
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn power(body: Bytes) -> Result<Json<DesignResult>, ApiError> {
    let inputs: DesignInputs = parse(&body)?;
    let m = inputs.m.ok_or_else(|| ApiError::field("m", "required by /power"))?;
    Ok(Json(design::evaluate(&inputs, m)?))
}

async fn samplesize(body: Bytes) -> Result<Json<DesignResult>, ApiError> {
    let inputs: DesignInputs = parse(&body)?;
    Ok(Json(blocking(move || design::required_clusters(&inputs)).await?))
}

async fn contour(body: Bytes) -> Result<Json<ContourResult>, ApiError> {
    let req: ContourRequest = parse(&body)?;
    Ok(Json(blocking(move || design::contour(&req)).await?))
}

async fn calibrate(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<JobStatus>), ApiError> {
    let req: CalibrationRequest = parse(&body)?;
    req.spec.validate()?;
    req.options.validate()?;
    app.config.check_budget(&req.options)?;

    let status = app.jobs.create();
    let id = status.id.clone();
    tracing::info!(job = %id, model = req.spec.model_name(), "calibration queued");
    tokio::spawn(async move {
        let Ok(_permit) = app.permits.acquire_owned().await else { return };
        app.jobs.update(&id, JobState::Running, None, None);
        match blocking(move || estimate_design_inputs(&req.spec, &req.options)).await {
            Ok(est) => app.jobs.update(&id, JobState::Done, Some(est), None),
            Err(ApiError(e)) => {
                tracing::warn!(job = %id, error = %e.message, "calibration failed");
                app.jobs.update(&id, JobState::Failed, None, Some(e));
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn job(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<JobStatus>, ApiError> {
    app.jobs
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError(ErrorBody::new("not_found", format!("no calibration job `{id}` (unknown or expired)"))))
}

pub fn router(config: ServiceConfig) -> Router {
    let cors = match &config.cors_origin {
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => CorsLayer::new().allow_origin(AllowOrigin::exact(v)),
            Err(_) => CorsLayer::new(),
        },
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    let state = AppState {
        jobs: Arc::new(JobStore::new(config.job_ttl)),
        permits: Arc::new(Semaphore::new(config.max_concurrent_jobs.max(1))),
        config: Arc::new(config),
    };
    Router::new()
        .route("/health", get(health))
        .route("/power", post(power))
        .route("/samplesize", post(samplesize))
        .route("/contour", post(contour))
        .route("/calibrate", post(calibrate))
        .route("/calibrate/{id}", get(job))
        .layer(cors)
        .with_state(state)
}

/// Serve until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "planning service listening");
    axum::serve(listener, router(config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
