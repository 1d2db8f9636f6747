//! JSON-over-HTTP service, versioned under `/v1`.
//!
//! Handlers only parse requests, take the store lock and serialize results;
//! all computation lives in `woundwatch-core`.

mod error;
mod handlers;

use std::future::Future;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use tokio::sync::RwLock;
use woundwatch_core::backend::{ClassifierBackend, Normalization};
use woundwatch_core::config::{AuthConfig, ConfigError, ServiceConfig};
use woundwatch_core::metrics::EvaluationBundle;
use woundwatch_core::store::{PatientStore, StoreOptions};
use woundwatch_core::{EnsembleConfig, StoreError};

pub use error::{status_for, ApiError};
pub use handlers::{
    AckRequest, AssessmentDraft, ClassifyResponse, CreatedAssessment, DeletedPatient, Health, LabelRequest,
    PatientList, PatientSummary,
};

/// Uploads larger than this are rejected before decoding.
pub const MAX_IMAGE_BYTES: usize = 20 * 1024 * 1024;
pub const MAX_LOG_BYTES: usize = 64 * 1024 * 1024;

struct Inner {
    store: RwLock<PatientStore>,
    backends: Vec<Arc<dyn ClassifierBackend>>,
    ensemble: EnsembleConfig,
    normalization: Normalization,
    auth: AuthConfig,
    evaluation: RwLock<Option<EvaluationBundle>>,
}

/// Shared service state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

#[derive(Debug)]
pub enum StartupError {
    Config(ConfigError),
    Store(StoreError),
}

impl std::fmt::Display for StartupError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StartupError::Config(e) => write!(f, "{e}"),
            StartupError::Store(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for StartupError {}

impl AppState {
    pub fn new(
        store: PatientStore,
        backends: Vec<Arc<dyn ClassifierBackend>>,
        ensemble: EnsembleConfig,
        normalization: Normalization,
        auth: AuthConfig,
    ) -> Self {
        AppState {
            inner: Arc::new(Inner {
                store: RwLock::new(store),
                backends,
                ensemble,
                normalization,
                auth,
                evaluation: RwLock::new(None),
            }),
        }
    }

    /// Validate the config, build the backends and open the store file.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, StartupError> {
        let ensemble = config.validate().map_err(StartupError::Config)?;
        let backends = config.build_backends().map_err(StartupError::Config)?;
        let store = PatientStore::open_with(config.store_file(), StoreOptions::default()).map_err(StartupError::Store)?;
        Ok(Self::new(store, backends, ensemble, config.preprocess, config.auth.clone()))
    }

    pub async fn last_sequence(&self) -> u64 {
        self.inner.store.read().await.last_sequence()
    }
}

fn tokens_match(given: &str, expected: &str) -> bool {
    // compare every byte so timing does not reveal the matching prefix
    given.len() == expected.len() && given.bytes().zip(expected.bytes()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
}

fn bearer(req: &Request) -> Option<&str> {
    req.headers()
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn unauthorized() -> Response {
    let mut resp = ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token").into_response();
    resp.headers_mut()
        .insert(header::WWW_AUTHENTICATE, header::HeaderValue::from_static("Bearer"));
    resp
}

async fn require_user(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let auth = &state.inner.auth;
    if auth.dev_mode {
        return next.run(req).await;
    }
    let ok = bearer(&req).is_some_and(|t| {
        auth.token.as_deref().is_some_and(|x| tokens_match(t, x))
            || auth.admin_token.as_deref().is_some_and(|x| tokens_match(t, x))
    });
    if ok {
        next.run(req).await
    } else {
        unauthorized()
    }
}

async fn require_admin(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let auth = &state.inner.auth;
    if auth.dev_mode {
        return next.run(req).await;
    }
    let Some(token) = bearer(&req) else {
        return unauthorized();
    };
    if auth.admin_token.as_deref().is_some_and(|x| tokens_match(token, x)) {
        next.run(req).await
    } else if auth.token.as_deref().is_some_and(|x| tokens_match(token, x)) {
        ApiError::new(StatusCode::FORBIDDEN, "forbidden", "admin token required").into_response()
    } else {
        unauthorized()
    }
}

/// One structured log line per request.
async fn log_request(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        target: "woundwatch::request",
        method = %method,
        path = %path,
        status = resp.status().as_u16(),
        latency_ms = started.elapsed().as_secs_f64() * 1000.0,
    );
    resp
}

async fn not_found() -> ApiError {
    ApiError::not_found("no_route", "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    let user = Router::new()
        .route("/patients", post(handlers::create_patient).get(handlers::list_patients))
        .route("/patients/{id}", get(handlers::get_patient).delete(handlers::delete_patient))
        .route("/patients/{id}/assessments", post(handlers::append_assessment))
        .route("/patients/{id}/timeline", get(handlers::timeline))
        .route("/patients/{id}/report", get(handlers::report))
        .route("/patients/{id}/alerts", get(handlers::alerts))
        .route("/patients/{id}/label", post(handlers::confirm_label))
        .route("/alerts/{alert_ref}/ack", post(handlers::acknowledge))
        .route(
            "/classify",
            post(handlers::classify).layer(DefaultBodyLimit::max(MAX_IMAGE_BYTES)),
        )
        .route_layer(middleware::from_fn_with_state(state.clone(), require_user));
    let admin = Router::new()
        .route(
            "/evaluation/logs",
            post(handlers::upload_log).layer(DefaultBodyLimit::max(MAX_LOG_BYTES)),
        )
        .route("/evaluation", get(handlers::evaluation))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_admin));
    let v1 = Router::new()
        .route("/health", get(handlers::health))
        .merge(user)
        .merge(admin);
    Router::new()
        .nest("/v1", v1)
        .fallback(not_found)
        .layer(middleware::from_fn(log_request))
        .with_state(state)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
