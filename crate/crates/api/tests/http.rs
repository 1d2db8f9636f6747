use std::io::Cursor;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;
use woundwatch_api::{router, AppState};
use woundwatch_core::backend::{stub_backend, BiasProfile, ClassifierBackend, Normalization};
use woundwatch_core::config::AuthConfig;
use woundwatch_core::fixtures::{reconstructed_test_log, P001_JSONL};
use woundwatch_core::metrics::write_log;
use woundwatch_core::store::StoreOptions;
use woundwatch_core::{EnsembleConfig, ModelId, PatientStore, WoundClass};

const TOKEN: &str = "user-token";
const ADMIN: &str = "admin-token";

fn schema_for(name: &str) -> jsonschema::Validator {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../schemas/api.schema.json")).unwrap();
    let root: Value = serde_json::from_str(&text).unwrap();
    let wrapper = json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$defs": root["$defs"],
        "$ref": format!("#/$defs/{name}"),
    });
    jsonschema::validator_for(&wrapper).unwrap()
}

fn assert_schema(name: &str, body: &Value) {
    let v = schema_for(name);
    let errors: Vec<String> = v.iter_errors(body).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name} schema violations: {errors:?}\n{body:#}");
}

fn backends(profiles: [BiasProfile; 3]) -> Vec<Arc<dyn ClassifierBackend>> {
    EnsembleConfig::reference_default()
        .member_ids()
        .zip(profiles)
        .enumerate()
        .map(|(i, (id, p))| Arc::new(stub_backend(id.clone(), i as u64 + 1, p)) as Arc<dyn ClassifierBackend>)
        .collect()
}

fn app_with(profiles: [BiasProfile; 3]) -> Router {
    let state = AppState::new(
        PatientStore::in_memory(StoreOptions::default()),
        backends(profiles),
        EnsembleConfig::reference_default(),
        Normalization::default(),
        AuthConfig {
            token: Some(TOKEN.into()),
            admin_token: Some(ADMIN.into()),
            dev_mode: false,
        },
    );
    router(state)
}

fn app() -> Router {
    app_with([BiasProfile::Random, BiasProfile::Random, BiasProfile::Random])
}

struct Reply {
    status: StatusCode,
    body: Value,
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let body = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    if !status.is_success() {
        assert_schema("Error", &body);
        assert_eq!(body["http_status"], status.as_u16());
    }
    Reply { status, body }
}

fn request(method: Method, uri: &str, token: Option<&str>) -> axum::http::request::Builder {
    let b = Request::builder().method(method).uri(uri);
    match token {
        Some(t) => b.header(header::AUTHORIZATION, format!("Bearer {t}")),
        None => b,
    }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, request(Method::GET, uri, Some(TOKEN)).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: Value) -> Reply {
    send(
        app,
        request(Method::POST, uri, Some(TOKEN))
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.to_string()))
            .unwrap(),
    )
    .await
}

async fn seed_p001(app: &Router) {
    assert_eq!(post_json(app, "/v1/patients", json!({"patient_id": "P001"})).await.status, StatusCode::CREATED);
    for line in P001_JSONL.lines().filter(|l| !l.trim().is_empty()) {
        let r = post_json(app, "/v1/patients/P001/assessments", serde_json::from_str(line).unwrap()).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
        assert_schema("CreatedAssessment", &r.body);
    }
}

fn png(rgb: [u8; 3]) -> Vec<u8> {
    let img = image::RgbImage::from_pixel(8, 8, image::Rgb(rgb));
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

fn multipart(parts: &[(&str, &[u8])]) -> (String, Vec<u8>) {
    let boundary = "XwoundwatchBoundaryX";
    let mut body = Vec::new();
    for (name, data) in parts {
        body.extend_from_slice(format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"").as_bytes());
        if *name == "image" {
            body.extend_from_slice(b"; filename=\"w.png\"\r\nContent-Type: image/png");
        }
        body.extend_from_slice(b"\r\n\r\n");
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

async fn classify(app: &Router, parts: &[(&str, &[u8])]) -> Reply {
    let (ct, body) = multipart(parts);
    send(
        app,
        request(Method::POST, "/v1/classify", Some(TOKEN))
            .header(header::CONTENT_TYPE, ct)
            .body(Body::from(body))
            .unwrap(),
    )
    .await
}

#[tokio::test]
async fn p001_report_over_http() {
    let app = app();
    seed_p001(&app).await;
    let r = get(&app, "/v1/patients/P001/report").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_schema("HealingReport", &r.body);
    assert_eq!(r.body["total_healing_pct"], json!(67.72));
    assert_eq!(r.body["average_rate_pct_per_day"], json!(4.41));
    assert_eq!(r.body["trend"], "Improving");
    let scores: Vec<u64> = r.body["severity_trajectory"].as_array().unwrap().iter().map(|s| s["score"].as_u64().unwrap()).collect();
    assert_eq!(scores, [9, 7, 5, 3]);
    assert_eq!(r.body["alerts"], json!([]));

    let t = get(&app, "/v1/patients/P001/timeline").await;
    assert_schema("TimelinePage", &t.body);
    assert_eq!(t.body["items"].as_array().unwrap().len(), 4);
    assert_eq!(t.body["next_cursor"], Value::Null);

    let list = get(&app, "/v1/patients").await;
    assert_schema("PatientList", &list.body);
    assert_eq!(list.body["patients"][0]["latest_severity"], 3);
    assert_schema("PatientRecord", &get(&app, "/v1/patients/P001").await.body);
}

#[tokio::test]
async fn timeline_pages_follow_the_cursor() {
    let app = app();
    seed_p001(&app).await;
    let first = get(&app, "/v1/patients/P001/timeline?limit=3").await;
    assert_eq!(first.body["items"].as_array().unwrap().len(), 3);
    let cursor = first.body["next_cursor"].as_u64().unwrap();
    let rest = get(&app, &format!("/v1/patients/P001/timeline?limit=3&after={cursor}")).await;
    assert_eq!(rest.body["items"].as_array().unwrap().len(), 1);
    assert_eq!(rest.body["next_cursor"], Value::Null);
    assert_eq!(get(&app, "/v1/patients/P001/timeline?limit=0").await.status, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/v1/patients/P001/timeline?limit=abc").await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn alert_acknowledgement_round_trip() {
    let app = app();
    post_json(&app, "/v1/patients", json!({"patient_id": "P002"})).await;
    post_json(&app, "/v1/patients/P002/assessments", json!({"captured_at": "2024-01-01", "area_cm2": 10.0})).await;
    post_json(&app, "/v1/patients/P002/assessments", json!({"captured_at": "2024-01-06", "area_cm2": 13.0})).await;
    let page = get(&app, "/v1/patients/P002/alerts").await;
    assert_eq!(page.status, StatusCode::OK);
    assert_schema("AlertPage", &page.body);
    let items = page.body["items"].as_array().unwrap();
    assert!(items.len() >= 2);
    let alert_ref = items[0]["alert"]["alert_ref"].as_str().unwrap().to_string();

    let ack = post_json(&app, &format!("/v1/alerts/{alert_ref}/ack"), json!({"acknowledged_by": "dr.osei"})).await;
    assert_eq!(ack.status, StatusCode::OK, "{}", ack.body);
    assert_schema("ClinicalAlert", &ack.body);
    assert_eq!(ack.body["acknowledged"], true);
    assert_eq!(ack.body["acknowledged_by"], "dr.osei");

    let again = post_json(&app, &format!("/v1/alerts/{alert_ref}/ack"), json!({"acknowledged_by": "dr.osei"})).await;
    assert_eq!(again.status, StatusCode::CONFLICT);
    assert_eq!(again.body["machine_code"], "already_acknowledged");

    let report = get(&app, "/v1/patients/P002/report").await;
    let acked = report.body["alerts"].as_array().unwrap().iter().find(|a| a["alert_ref"] == alert_ref.as_str()).unwrap().clone();
    assert_eq!(acked["acknowledged"], true);

    let missing = post_json(&app, "/v1/alerts/P002~1~area_increase/ack", json!({"acknowledged_by": "x"})).await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
    let garbage = post_json(&app, "/v1/alerts/not-a-ref/ack", json!({"acknowledged_by": "x"})).await;
    assert_eq!(garbage.status, StatusCode::NOT_FOUND);
    let anonymous = post_json(&app, &format!("/v1/alerts/{}/ack", items[1]["alert"]["alert_ref"].as_str().unwrap()), json!({"acknowledged_by": " "})).await;
    assert_eq!(anonymous.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn error_mapping_per_endpoint() {
    let app = app();
    seed_p001(&app).await;
    // 404
    assert_eq!(get(&app, "/v1/patients/UNKNOWN/timeline").await.status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/v1/patients/UNKNOWN/report").await.status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/v1/patients/UNKNOWN/alerts").await.status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/v1/patients/UNKNOWN").await.status, StatusCode::NOT_FOUND);
    assert_eq!(
        post_json(&app, "/v1/patients/UNKNOWN/assessments", json!({"captured_at": "2024-01-01", "area_cm2": 1.0})).await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(get(&app, "/v1/nowhere").await.status, StatusCode::NOT_FOUND);

    // 409
    let dup = post_json(&app, "/v1/patients", json!({"patient_id": "P001"})).await;
    assert_eq!(dup.status, StatusCode::CONFLICT);
    assert_eq!(dup.body["machine_code"], "duplicate_patient");
    let regress = post_json(&app, "/v1/patients/P001/assessments", json!({"captured_at": "2024-01-22T00:00:00Z", "area_cm2": 9.0})).await;
    assert_eq!(regress.status, StatusCode::CONFLICT);
    assert_eq!(regress.body["machine_code"], "timestamp_regression");

    // 415
    let wrong_type = send(
        &app,
        request(Method::POST, "/v1/patients", Some(TOKEN))
            .header(header::CONTENT_TYPE, "text/plain")
            .body(Body::from(r#"{"patient_id":"P009"}"#))
            .unwrap(),
    )
    .await;
    assert_eq!(wrong_type.status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let not_multipart = post_json(&app, "/v1/classify", json!({})).await;
    assert_eq!(not_multipart.status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let bad_image = classify(&app, &[("image", b"not an image at all")]).await;
    assert_eq!(bad_image.status, StatusCode::UNSUPPORTED_MEDIA_TYPE);

    // 422
    let negative = post_json(&app, "/v1/patients/P001/assessments", json!({"captured_at": "2024-03-01", "area_cm2": -1.0})).await;
    assert_eq!(negative.status, StatusCode::UNPROCESSABLE_ENTITY);
    let grade = post_json(&app, "/v1/patients/P001/assessments", json!({"captured_at": "2024-03-01", "area_cm2": 1.0, "depth_grade": 7})).await;
    assert_eq!(grade.status, StatusCode::UNPROCESSABLE_ENTITY);
    let bad_id = post_json(&app, "/v1/patients", json!({"patient_id": "a~b"})).await;
    assert_eq!(bad_id.status, StatusCode::UNPROCESSABLE_ENTITY);
    let mismatch = post_json(&app, "/v1/patients/P001/assessments", json!({"patient_id": "P002", "captured_at": "2024-03-01", "area_cm2": 1.0})).await;
    assert_eq!(mismatch.status, StatusCode::UNPROCESSABLE_ENTITY);
    post_json(&app, "/v1/patients", json!({"patient_id": "EMPTY"})).await;
    assert_eq!(get(&app, "/v1/patients/EMPTY/report").await.status, StatusCode::UNPROCESSABLE_ENTITY);

    // 400
    let broken = send(
        &app,
        request(Method::POST, "/v1/patients", Some(TOKEN))
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from("{not json"))
            .unwrap(),
    )
    .await;
    assert_eq!(broken.status, StatusCode::BAD_REQUEST);
    assert_eq!(post_json(&app, "/v1/patients", json!({"patient_id": "X", "surprise": 1})).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(
        post_json(&app, "/v1/patients/P001/assessments", json!({"captured_at": "yesterday", "area_cm2": 1.0})).await.status,
        StatusCode::UNPROCESSABLE_ENTITY
    );
}

#[tokio::test]
async fn idempotent_patient_creation() {
    let app = app();
    let create = |key: &'static str, id: &'static str| {
        request(Method::POST, "/v1/patients", Some(TOKEN))
            .header(header::CONTENT_TYPE, "application/json")
            .header("Idempotency-Key", key)
            .body(Body::from(json!({"patient_id": id}).to_string()))
            .unwrap()
    };
    let first = send(&app, create("k-1", "P010")).await;
    assert_eq!(first.status, StatusCode::CREATED);
    let replay = send(&app, create("k-1", "P010")).await;
    assert_eq!(replay.status, StatusCode::OK);
    assert_eq!(first.body, replay.body);
    let reused = send(&app, create("k-1", "P011")).await;
    assert_eq!(reused.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn tombstoned_patients_disappear() {
    let app = app();
    seed_p001(&app).await;
    let del = send(&app, request(Method::DELETE, "/v1/patients/P001", Some(TOKEN)).body(Body::empty()).unwrap()).await;
    assert_eq!(del.status, StatusCode::OK);
    assert_schema("DeletedPatient", &del.body);
    assert_eq!(get(&app, "/v1/patients").await.body["patients"], json!([]));
    assert_eq!(get(&app, "/v1/patients/P001/report").await.status, StatusCode::OK);
    let append = post_json(&app, "/v1/patients/P001/assessments", json!({"captured_at": "2024-02-01", "area_cm2": 5.0})).await;
    assert_eq!(append.status, StatusCode::CONFLICT);
    assert_eq!(get(&app, "/v1/patients/P001").await.status, StatusCode::OK);
    let again = send(&app, request(Method::DELETE, "/v1/patients/P001", Some(TOKEN)).body(Body::empty()).unwrap()).await;
    assert_eq!(again.status.as_u16() / 100, 4);
}

#[tokio::test]
async fn label_confirmation() {
    let app = app();
    seed_p001(&app).await;
    let r = post_json(&app, "/v1/patients/P001/label", json!({"wound_label": "FootUlcer", "confirmed_by": "dr.osei"})).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_schema("PatientRecord", &r.body);
    assert_eq!(r.body["wound_label"], "FootUlcer");
    let bad = post_json(&app, "/v1/patients/P001/label", json!({"wound_label": "Scratch", "confirmed_by": "dr.osei"})).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn classify_unanimous_and_disagreeing() {
    let burn = BiasProfile::AlwaysClass(WoundClass::ThermalBurn);
    let app = app_with([burn.clone(), burn.clone(), burn]);
    let r = classify(&app, &[("image", &png([200, 40, 40]))]).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    assert_schema("ClassifyResponse", &r.body);
    assert_eq!(r.body["predicted_class"], "ThermalBurn");
    assert_eq!(r.body["needs_review"], false);
    assert!(r.body.get("draft_assessment").is_none());

    let split = app_with([
        BiasProfile::AlwaysClass(WoundClass::FootUlcer),
        BiasProfile::AlwaysClass(WoundClass::VenousUlcer),
        BiasProfile::AlwaysClass(WoundClass::FootUlcer),
    ]);
    let r = classify(&split, &[("image", &png([10, 10, 10]))]).await;
    assert_eq!(r.body["needs_review"], true);
    assert_eq!(r.body["review_reasons"], json!(["member_disagreement"]));
    assert_eq!(r.body["predicted_class"], "FootUlcer");
}

#[tokio::test]
async fn classify_is_byte_stable_and_drafts_for_patients() {
    let image = png([90, 120, 30]);
    let a = app();
    let b = app();
    let ra = classify(&a, &[("image", &image)]).await;
    let rb = classify(&b, &[("image", &image)]).await;
    assert_eq!(ra.body.to_string(), rb.body.to_string());

    post_json(&a, "/v1/patients", json!({"patient_id": "P050"})).await;
    let with_patient = classify(&a, &[("image", &image), ("patient_id", b"P050")]).await;
    assert_schema("ClassifyResponse", &with_patient.body);
    assert_eq!(with_patient.body["draft_assessment"]["patient_id"], "P050");
    assert_eq!(with_patient.body["draft_assessment"]["classification"]["fused"], ra.body["fused"]);
    let unknown = classify(&a, &[("image", &image), ("patient_id", b"NOPE")]).await;
    assert_eq!(unknown.status, StatusCode::NOT_FOUND);
    let no_image = classify(&a, &[("patient_id", b"P050")]).await;
    assert_eq!(no_image.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn backend_mismatch_is_unavailable() {
    let state = AppState::new(
        PatientStore::in_memory(StoreOptions::default()),
        vec![Arc::new(stub_backend(ModelId::new("other"), 1, BiasProfile::Random))],
        EnsembleConfig::reference_default(),
        Normalization::default(),
        AuthConfig { dev_mode: true, ..AuthConfig::default() },
    );
    let app = router(state);
    let r = classify(&app, &[("image", &png([1, 2, 3]))]).await;
    assert_eq!(r.status, StatusCode::SERVICE_UNAVAILABLE);
}

async fn upload(app: &Router, token: &str, body: String) -> Reply {
    send(
        app,
        request(Method::POST, "/v1/evaluation/logs", Some(token))
            .header(header::CONTENT_TYPE, "application/x-ndjson")
            .body(Body::from(body))
            .unwrap(),
    )
    .await
}

#[tokio::test]
async fn evaluation_upload_and_fetch() {
    let app = app();
    let admin_get = |uri: &str| request(Method::GET, uri, Some(ADMIN)).body(Body::empty()).unwrap();
    assert_eq!(send(&app, admin_get("/v1/evaluation")).await.status, StatusCode::NOT_FOUND);

    let r = upload(&app, ADMIN, write_log(&reconstructed_test_log())).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_schema("EvaluationBundle", &r.body);
    let fetched = send(&app, admin_get("/v1/evaluation")).await;
    assert_eq!(fetched.body, r.body);
    let acc = fetched.body["ensemble"]["metrics"]["accuracy"].as_f64().unwrap();
    assert!((acc - 0.99904).abs() < 5e-6);
    let member = send(&app, admin_get("/v1/evaluation?source=ResNet50")).await;
    assert_eq!(member.status, StatusCode::OK);
    assert_schema("SourceEvaluation", &member.body);
    assert_eq!(member.body["metrics"]["accuracy"], 1.0);
    assert_eq!(send(&app, admin_get("/v1/evaluation?source=nope")).await.status, StatusCode::NOT_FOUND);

    assert_eq!(upload(&app, ADMIN, String::new()).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(upload(&app, ADMIN, "{oops\n".into()).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(upload(&app, TOKEN, write_log(&reconstructed_test_log()[..6])).await.status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn perfect_log_scores_one() {
    let app = app();
    let log: Vec<_> = WoundClass::ALL
        .iter()
        .map(|&c| {
            let p: Vec<f64> = WoundClass::ALL.iter().map(|&k| if k == c { 1.0 } else { 0.0 }).collect();
            json!({"item_id": c.code(), "true_class": c, "per_model": {"ResNet50": p, "DINOv2": p, "SwinTransformer": p}}).to_string()
        })
        .collect();
    let r = upload(&app, ADMIN, log.join("\n")).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    let m = &r.body["ensemble"]["metrics"];
    assert_eq!(m["accuracy"], 1.0);
    for pc in m["per_class"].as_array().unwrap() {
        assert_eq!(pc["precision"], 1.0);
        assert_eq!(pc["recall"], 1.0);
        assert_eq!(pc["f1"], 1.0);
    }
}

#[tokio::test]
async fn authentication() {
    let app = app();
    let anon = send(&app, request(Method::GET, "/v1/patients", None).body(Body::empty()).unwrap()).await;
    assert_eq!(anon.status, StatusCode::UNAUTHORIZED);
    let wrong = send(&app, request(Method::GET, "/v1/patients", Some("nope")).body(Body::empty()).unwrap()).await;
    assert_eq!(wrong.status, StatusCode::UNAUTHORIZED);
    let admin_as_user = send(&app, request(Method::GET, "/v1/patients", Some(ADMIN)).body(Body::empty()).unwrap()).await;
    assert_eq!(admin_as_user.status, StatusCode::OK);
    let health = send(&app, request(Method::GET, "/v1/health", None).body(Body::empty()).unwrap()).await;
    assert_eq!(health.status, StatusCode::OK);
    assert_schema("Health", &health.body);
}
