use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::{PathRejection, QueryRejection};
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use woundwatch_core::backend::{classify as run_classify, ImageInput};
use woundwatch_core::healing::{AlertRef, SeverityBand};
use woundwatch_core::metrics::{read_log, EvaluationBundle};
use woundwatch_core::store::{AlertPage, NewPatient, PatientRecord, TimelinePage};
use woundwatch_core::{AssessmentError, AssessmentInput, EnsembleDecision, StoreError, WoundAssessment, WoundClass};

use crate::{ApiError, AppState};

type ApiResult<T> = Result<T, ApiError>;

const DEFAULT_PAGE: usize = 100;
const MAX_PAGE: usize = 1000;

fn content_type(headers: &HeaderMap) -> String {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.split(';').next())
        .map(|v| v.trim().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Enforce `application/json` and parse; shape errors are 400s.
fn json_body<T: DeserializeOwned>(headers: &HeaderMap, body: &Bytes) -> ApiResult<T> {
    let ct = content_type(headers);
    if ct != "application/json" && !ct.ends_with("+json") {
        return Err(ApiError::unsupported_media_type("application/json"));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::malformed("malformed_json", e.to_string()))
}

fn path_param(p: Result<Path<String>, PathRejection>) -> ApiResult<String> {
    p.map(|Path(v)| v).map_err(|e| ApiError::malformed("bad_path", e.body_text()))
}

#[derive(Debug, Deserialize)]
pub struct PageParams {
    after: Option<u64>,
    limit: Option<usize>,
}

fn page_params(q: Result<Query<PageParams>, QueryRejection>) -> ApiResult<(Option<u64>, usize)> {
    let Query(p) = q.map_err(|e| ApiError::malformed("bad_query", e.body_text()))?;
    let limit = p.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::malformed("bad_query", format!("limit must be in 1..={MAX_PAGE}")));
    }
    Ok((p.after, limit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub last_sequence: u64,
}

pub async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        last_sequence: state.last_sequence().await,
    })
}

pub async fn create_patient(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let mut new: NewPatient = json_body(&headers, &body)?;
    if let Some(key) = headers.get("idempotency-key").and_then(|v| v.to_str().ok()) {
        match &new.idempotency_key {
            Some(k) if k != key => {
                return Err(ApiError::malformed(
                    "idempotency_key_mismatch",
                    "Idempotency-Key header and body field differ",
                ))
            }
            _ => new.idempotency_key = Some(key.to_string()),
        }
    }
    let outcome = state.inner.store.write().await.create_patient(new)?;
    let status = if outcome.created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(outcome.record)).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSummary {
    pub patient_id: String,
    pub created_at: DateTime<Utc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wound_label: Option<WoundClass>,
    pub assessment_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latest_area_cm2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latest_severity: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latest_severity_band: Option<SeverityBand>,
    pub unacknowledged_alerts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientList {
    pub patients: Vec<PatientSummary>,
}

pub async fn list_patients(State(state): State<AppState>) -> ApiResult<Json<PatientList>> {
    let store = state.inner.store.read().await;
    let mut patients = Vec::new();
    for record in store.patients() {
        let timeline = store.load_timeline(&record.patient_id)?;
        let mut summary = PatientSummary {
            patient_id: record.patient_id.clone(),
            created_at: record.created_at,
            wound_label: record.wound_label,
            assessment_count: timeline.len(),
            latest_area_cm2: timeline.last().map(|a| a.area_cm2),
            latest_severity: None,
            latest_severity_band: None,
            unacknowledged_alerts: 0,
        };
        if !timeline.is_empty() {
            // a report can still be undefined, e.g. zero baseline area
            if let Ok(report) = store.report(&record.patient_id) {
                let latest = report.severity_trajectory.last();
                summary.latest_severity = latest.map(|s| s.score);
                summary.latest_severity_band = latest.map(|s| s.band);
                summary.unacknowledged_alerts = report.alerts.iter().filter(|a| !a.acknowledged).count();
            }
        }
        patients.push(summary);
    }
    Ok(Json(PatientList { patients }))
}

pub async fn get_patient(
    State(state): State<AppState>,
    id: Result<Path<String>, PathRejection>,
) -> ApiResult<Json<PatientRecord>> {
    let id = path_param(id)?;
    Ok(Json(state.inner.store.read().await.patient(&id)?.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletedPatient {
    pub patient_id: String,
    pub sequence_no: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeleteRequest {
    #[serde(default)]
    reason: String,
}

pub async fn delete_patient(
    State(state): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<DeletedPatient>> {
    let id = path_param(id)?;
    let req: DeleteRequest = if body.is_empty() { DeleteRequest::default() } else { json_body(&headers, &body)? };
    let sequence_no = state.inner.store.write().await.tombstone_patient(&id, &req.reason)?;
    Ok(Json(DeletedPatient {
        patient_id: id,
        sequence_no,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedAssessment {
    pub sequence_no: u64,
    pub assessment: WoundAssessment,
}

pub async fn append_assessment(
    State(state): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let id = path_param(id)?;
    let mut input: AssessmentInput = json_body(&headers, &body)?;
    match &input.patient_id {
        None => input.patient_id = Some(id.clone()),
        Some(p) if *p != id => {
            return Err(AssessmentError::PatientMismatch {
                expected: id,
                found: p.clone(),
            }
            .into())
        }
        Some(_) => {}
    }
    let assessment = input.validate()?;
    let sequence_no = state
        .inner
        .store
        .write()
        .await
        .append_assessment(&id, assessment.clone())?;
    Ok((StatusCode::CREATED, Json(CreatedAssessment { sequence_no, assessment })).into_response())
}

pub async fn timeline(
    State(state): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    q: Result<Query<PageParams>, QueryRejection>,
) -> ApiResult<Json<TimelinePage>> {
    let id = path_param(id)?;
    let (after, limit) = page_params(q)?;
    Ok(Json(state.inner.store.read().await.timeline_page(&id, after, limit)?))
}

pub async fn report(State(state): State<AppState>, id: Result<Path<String>, PathRejection>) -> ApiResult<Response> {
    let id = path_param(id)?;
    let report = state.inner.store.read().await.report(&id)?;
    Ok(Json(report).into_response())
}

pub async fn alerts(
    State(state): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    q: Result<Query<PageParams>, QueryRejection>,
) -> ApiResult<Json<AlertPage>> {
    let id = path_param(id)?;
    let (after, limit) = page_params(q)?;
    Ok(Json(state.inner.store.read().await.alerts_page(&id, after, limit)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AckRequest {
    pub acknowledged_by: String,
}

pub async fn acknowledge(
    State(state): State<AppState>,
    alert_ref: Result<Path<String>, PathRejection>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let alert_ref = path_param(alert_ref)?;
    let req: AckRequest = json_body(&headers, &body)?;
    let parsed = AlertRef::parse(&alert_ref).map_err(|_| StoreError::UnknownAlert(alert_ref.clone()))?;
    let alert = state
        .inner
        .store
        .write()
        .await
        .acknowledge_alert(&parsed.patient_id, &alert_ref, &req.acknowledged_by)?;
    Ok(Json(alert).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub wound_label: WoundClass,
    pub confirmed_by: String,
}

pub async fn confirm_label(
    State(state): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<PatientRecord>> {
    let id = path_param(id)?;
    let req: LabelRequest = json_body(&headers, &body)?;
    let mut store = state.inner.store.write().await;
    store.confirm_label(&id, req.wound_label, &req.confirmed_by)?;
    Ok(Json(store.patient(&id)?.clone()))
}

/// Starting point for an assessment: the client adds `captured_at` and
/// `area_cm2`, confirms or overrides the label, and posts it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentDraft {
    pub patient_id: String,
    pub classification: EnsembleDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    #[serde(flatten)]
    pub decision: EnsembleDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draft_assessment: Option<AssessmentDraft>,
}

pub async fn classify(
    State(state): State<AppState>,
    headers: HeaderMap,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<Json<ClassifyResponse>> {
    if content_type(&headers) != "multipart/form-data" {
        return Err(ApiError::unsupported_media_type("multipart/form-data"));
    }
    let mut multipart = multipart.map_err(|e| ApiError::malformed("malformed_multipart", e.body_text()))?;
    let bad_part = |e: axum::extract::multipart::MultipartError| {
        ApiError::new(e.status(), "malformed_multipart", e.body_text())
    };
    let mut image: Option<Bytes> = None;
    let mut patient_id: Option<String> = None;
    while let Some(field) = multipart.next_field().await.map_err(bad_part)? {
        match field.name() {
            Some("image") => image = Some(field.bytes().await.map_err(bad_part)?),
            Some("patient_id") => patient_id = Some(field.text().await.map_err(bad_part)?.trim().to_string()),
            Some(other) => {
                return Err(ApiError::malformed("unexpected_field", format!("unexpected form field {other:?}")))
            }
            None => return Err(ApiError::malformed("unexpected_field", "unnamed form field")),
        }
    }
    let image = image.ok_or_else(|| ApiError::malformed("missing_image", "form field \"image\" is required"))?;
    if let Some(pid) = &patient_id {
        state.inner.store.read().await.patient(pid)?;
    }

    let worker = state.clone();
    let decision = tokio::task::spawn_blocking(move || {
        let inner = &worker.inner;
        run_classify(
            &ImageInput::from_encoded("upload", image.to_vec()),
            &inner.backends,
            &inner.ensemble,
            &inner.normalization,
        )
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;

    Ok(Json(ClassifyResponse {
        draft_assessment: patient_id.map(|patient_id| AssessmentDraft {
            patient_id,
            classification: decision.clone(),
        }),
        decision,
    }))
}

const LOG_CONTENT_TYPES: [&str; 5] = [
    "application/x-ndjson",
    "application/jsonl",
    "application/json-lines",
    "application/json",
    "text/plain",
];

pub async fn upload_log(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    if !LOG_CONTENT_TYPES.contains(&content_type(&headers).as_str()) {
        return Err(ApiError::unsupported_media_type("application/x-ndjson"));
    }
    let entries = read_log(body.as_ref())?;
    if entries.is_empty() {
        return Err(ApiError::malformed("empty_log", "prediction log has no entries"));
    }
    let bundle = woundwatch_core::evaluate_log(&entries, &state.inner.ensemble)?;
    *state.inner.evaluation.write().await = Some(bundle.clone());
    Ok((StatusCode::CREATED, Json(bundle)).into_response())
}

#[derive(Debug, Deserialize)]
pub struct EvaluationParams {
    source: Option<String>,
}

pub async fn evaluation(
    State(state): State<AppState>,
    q: Result<Query<EvaluationParams>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(params) = q.map_err(|e| ApiError::malformed("bad_query", e.body_text()))?;
    let guard = state.inner.evaluation.read().await;
    let bundle: &EvaluationBundle = guard
        .as_ref()
        .ok_or_else(|| ApiError::not_found("no_evaluation_log", "no prediction log has been uploaded"))?;
    match params.source {
        None => Ok(Json(bundle).into_response()),
        Some(source) => bundle
            .source(&source)
            .map(|s| Json(s).into_response())
            .ok_or_else(|| ApiError::not_found("unknown_source", format!("no source {source:?} in the log"))),
    }
}
