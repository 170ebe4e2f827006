use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE, COOKIE, SET_COOKIE};
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use serde_json::{json, Value};
use tower::ServiceExt;

use segrate_core::experiment::{ingest_manifest, LoadedManifest};
use segrate_core::ratings::RatingRecord;
use segrate_core::replica::{generate_replica, write_replica, Replica, ReplicaConfig};
use segrate_service::driver::{drive, DriverOptions, ITI_MS};
use segrate_service::{router, AppState, ServiceConfig, SteppingClock};

const TOKEN: &str = "operator-secret";

struct Fixture {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    replica: Replica,
}

impl Fixture {
    fn new(exams: usize, raters: usize) -> Self {
        let config = ReplicaConfig { exams, raters, dims: [20, 20, 12], ..Default::default() };
        let replica = generate_replica(&config);
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        write_replica(&replica, &root).unwrap();
        Fixture { _dir: dir, root, replica }
    }

    fn loaded(&self) -> LoadedManifest {
        ingest_manifest(&self.root.join("experiment/manifest.json")).unwrap()
    }

    fn app_with(&self, token: Option<&str>) -> Router {
        let config = ServiceConfig {
            seed: 42,
            data_dir: self.root.join("log"),
            export_token: token.map(str::to_string),
        };
        let clock = Arc::new(SteppingClock::new(Utc.with_ymd_and_hms(2026, 1, 5, 9, 0, 0).unwrap(), 1));
        router(Arc::new(AppState::new(vec![self.loaded()], &config, clock).unwrap()))
    }

    fn app(&self) -> Router {
        self.app_with(Some(TOKEN))
    }

    fn log_path(&self) -> std::path::PathBuf {
        self.root.join("log").join(format!("{}.jsonl", self.replica.manifest.experiment_id))
    }

    fn exp(&self) -> &str {
        &self.replica.manifest.experiment_id
    }
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, String)]) -> (StatusCode, Vec<u8>, Option<String>) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, v);
    }
    let req = match body {
        Some(b) => req.header(CONTENT_TYPE, "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let cookie = resp.headers().get(SET_COOKIE).map(|v| v.to_str().unwrap().to_string());
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    (status, bytes, cookie)
}

fn parse(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn login(app: &Router, exp: &str, participant: &str) -> (String, Value) {
    let (status, body, cookie) =
        send(app, "POST", "/api/session", Some(json!({"experiment_id": exp, "participant": participant})), &[]).await;
    assert_eq!(status, StatusCode::OK);
    let cookie = cookie.unwrap().split(';').next().unwrap().to_string();
    (cookie, parse(&body))
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[tokio::test]
async fn anonymous_manifest_is_blinded() {
    let f = Fixture::new(1, 1);
    let app = f.app();
    let (status, body, _) = send(&app, "GET", &format!("/api/experiment/{}/manifest", f.exp()), None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(body.clone()).unwrap();
    for cond in ["reference", "simple", "zyx", "rnd"] {
        assert!(!text.contains(cond), "manifest reveals '{cond}'");
    }
    let v = parse(&body);
    assert!(v.get("blinding").is_none());
    assert_eq!(v["trials"].as_array().unwrap().len(), 2 * 3 * 4);
    assert_eq!(v["next_trial"], Value::Null);

    let (status, _, _) = send(&app, "GET", "/api/experiment/nope/manifest", None, &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn session_is_idempotent_and_orders_are_per_participant() {
    let f = Fixture::new(1, 1);
    let app = f.app();
    let (c1, s1) = login(&app, f.exp(), "alice").await;
    let (c1b, s1b) = login(&app, f.exp(), "alice").await;
    assert_eq!(c1, c1b);
    assert_eq!(s1["created"], json!(true));
    assert_eq!(s1b["created"], json!(false));
    assert_eq!(s1["total"], json!(24));
    let (c2, _) = login(&app, f.exp(), "bob").await;

    let uri = format!("/api/experiment/{}/manifest", f.exp());
    let order = |b: &[u8]| -> Vec<String> {
        parse(b)["trials"].as_array().unwrap().iter().map(|t| t["trial_id"].as_str().unwrap().to_string()).collect()
    };
    let a1 = order(&send(&app, "GET", &uri, None, &[("cookie", c1.clone())]).await.1);
    let a2 = order(&send(&app, "GET", &uri, None, &[("cookie", c1.clone())]).await.1);
    let b1 = order(&send(&app, "GET", &uri, None, &[("cookie", c2.clone())]).await.1);
    assert_eq!(a1, a2);
    assert_ne!(a1, b1);
    let mut sorted_a = a1.clone();
    let mut sorted_b = b1.clone();
    sorted_a.sort();
    sorted_b.sort();
    assert_eq!(sorted_a, sorted_b);
    let (_, body, _) = send(&app, "GET", &uri, None, &[("cookie", c1.clone())]).await;
    assert_eq!(parse(&body)["next_trial"], json!(a1[0]));

    let (status, _, _) =
        send(&app, "POST", "/api/session", Some(json!({"experiment_id": f.exp(), "participant": ""})), &[]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _, _) =
        send(&app, "POST", "/api/session", Some(json!({"experiment_id": "nope", "participant": "x"})), &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn response_validation_and_idempotency() {
    let f = Fixture::new(1, 1);
    let app = f.app();
    let (cookie, session) = login(&app, f.exp(), "alice").await;
    let trial = session["next_trial"].as_str().unwrap().to_string();
    let h = [("cookie", cookie.clone())];
    let body = |stars: Value| json!({"trial_id": trial, "stars": stars, "reaction_time_ms": 812.0, "toggle_count": 2, "client_timestamp": "2026-01-05T09:00:01.000Z"});

    for bad in [json!(0), json!(7), json!(-1), json!("four")] {
        let (status, _, _) = send(&app, "POST", "/api/response", Some(body(bad.clone())), &h).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "stars {bad}");
    }
    let (status, _, _) = send(&app, "POST", "/api/response", Some(body(json!(4))), &[]).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let unknown = json!({"trial_id": "t999", "stars": 3, "reaction_time_ms": 1.0});
    let (status, _, _) = send(&app, "POST", "/api/response", Some(unknown), &h).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let negative = json!({"trial_id": trial, "stars": 3, "reaction_time_ms": -5.0});
    let (status, _, _) = send(&app, "POST", "/api/response", Some(negative), &h).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let lines_before = line_count(&f.log_path());
    let (status, first, _) = send(&app, "POST", "/api/response", Some(body(json!(4))), &h).await;
    assert_eq!(status, StatusCode::OK);
    let first = parse(&first);
    assert_eq!(first["duplicate"], json!(false));
    assert!(first["server_timestamp"].as_str().unwrap().starts_with("2026-01-05T09:00:00"));
    assert_eq!(line_count(&f.log_path()), lines_before + 1);

    let (status, again, _) = send(&app, "POST", "/api/response", Some(body(json!(4))), &h).await;
    assert_eq!(status, StatusCode::OK);
    let again = parse(&again);
    assert_eq!(again["duplicate"], json!(true));
    assert_eq!(again["server_timestamp"], first["server_timestamp"]);

    let (status, conflict, _) = send(&app, "POST", "/api/response", Some(body(json!(5))), &h).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(parse(&conflict)["stars"], json!(4));
    assert_eq!(line_count(&f.log_path()), lines_before + 1);
}

#[tokio::test]
async fn survey_is_validated_per_phase() {
    let f = Fixture::new(1, 1);
    let app = f.app();
    let (cookie, _) = login(&app, f.exp(), "alice").await;
    let h = [("cookie", cookie)];
    let bad = json!({"phase": "pre", "answers": {"age": "old", "gender": "male", "experience_years": 3, "institution": "x"}});
    let (status, _, _) = send(&app, "POST", "/api/survey", Some(bad), &h).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let good = json!({"phase": "pre", "answers": {"age": 40, "gender": "female", "experience_years": 12, "institution": "site-1"}});
    let (status, _, _) = send(&app, "POST", "/api/survey", Some(good.clone()), &h).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body, _) = send(&app, "POST", "/api/survey", Some(good), &h).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse(&body)["duplicate"], json!(true));
    let (status, _, _) = send(&app, "POST", "/api/survey", Some(json!({"phase": "during", "answers": {}})), &h).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn stimuli_are_served_only_by_reference() {
    let f = Fixture::new(1, 1);
    let app = f.app();
    let reference = f.replica.manifest.trials[0].overlay.clone();
    let (status, body, _) = send(&app, "GET", &format!("/api/stimulus/{reference}"), None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&body[..4], b"\x89PNG");
    for bad in ["missing.png", "..%2Fmanifest.json", "manifest.json"] {
        let (status, _, _) = send(&app, "GET", &format!("/api/stimulus/{bad}"), None, &[]).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{bad}");
    }
}

#[tokio::test]
async fn export_requires_operator_token() {
    let f = Fixture::new(1, 1);
    let uri = format!("/api/experiment/{}/export", f.exp());
    let app = f.app();
    let (status, body, _) = send(&app, "GET", &uri, None, &[(AUTHORIZATION.as_str(), format!("Bearer {TOKEN}"))]).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.is_empty());
    let (status, _, _) = send(&app, "GET", &uri, None, &[]).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _, _) = send(&app, "GET", &uri, None, &[(AUTHORIZATION.as_str(), "Bearer wrong".into())]).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (cookie, _) = login(&app, f.exp(), "alice").await;
    let (status, _, _) = send(&app, "GET", &uri, None, &[(COOKIE.as_str(), cookie)]).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    drop(app);
    let disabled = f.app_with(None);
    let (status, _, _) = send(&disabled, "GET", &uri, None, &[(AUTHORIZATION.as_str(), format!("Bearer {TOKEN}"))]).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
}

fn driver_options() -> DriverOptions {
    DriverOptions {
        seed: 42,
        start: Utc.with_ymd_and_hms(2026, 1, 5, 9, 0, 0).unwrap(),
        export_token: TOKEN.into(),
        reload_after: Some(10),
        resend_every: Some(7),
    }
}

#[tokio::test]
async fn driven_session_round_trips_through_export() {
    let f = Fixture::new(1, 3);
    let report = drive(f.app(), &f.replica.plan, &driver_options()).await.unwrap();
    assert_eq!(report.participants, 3);
    assert_eq!(report.responses, 3 * 24);
    assert_eq!(report.resumes, 3);
    assert!(report.duplicates_acknowledged >= 3 * 3);
    assert!(report.itis_ms.iter().all(|i| ITI_MS.contains(i)));

    let text = String::from_utf8(report.ratings_jsonl.clone()).unwrap();
    let rows: Vec<RatingRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3 * 24);
    let manifest = &f.replica.manifest;
    for row in &rows {
        let trial = manifest.trial(row.trial_id.as_deref().unwrap()).unwrap();
        assert_eq!(row.method, manifest.condition(trial));
        assert_eq!(row.attention_check, trial.attention_check);
        let planned = f.replica.plan.participant(&row.participant).unwrap();
        let r = planned.responses.iter().find(|r| Some(&r.trial_id) == row.trial_id.as_ref()).unwrap();
        assert_eq!((row.stars, row.reaction_time_ms, row.toggle_count), (r.stars, r.reaction_time_ms, r.toggle_count));
        assert!(row.server_timestamp.is_some());
    }
    let surveys: Vec<Value> =
        String::from_utf8(report.survey_jsonl).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(surveys.len(), 3 * 2);

    // Replay from the log yields the same export.
    let reopened = f.app();
    let uri = format!("/api/experiment/{}/export", f.exp());
    let (_, body, _) = send(&reopened, "GET", &uri, None, &[(AUTHORIZATION.as_str(), format!("Bearer {TOKEN}"))]).await;
    assert_eq!(body, report.ratings_jsonl);
}

#[tokio::test]
async fn full_exp1_session_exports_300_rows() {
    let config = ReplicaConfig { raters: 1, dims: [20, 20, 12], ..Default::default() };
    let replica = generate_replica(&config);
    let dir = tempfile::tempdir().unwrap();
    write_replica(&replica, dir.path()).unwrap();
    let loaded = ingest_manifest(&dir.path().join("experiment/manifest.json")).unwrap();
    let service = ServiceConfig { seed: 42, data_dir: dir.path().join("log"), export_token: Some(TOKEN.into()) };
    let state = AppState::new(vec![loaded], &service, Arc::new(SteppingClock::new(Utc::now(), 1))).unwrap();
    let report = drive(router(Arc::new(state)), &replica.plan, &driver_options()).await.unwrap();
    assert_eq!(report.responses, 300);
    assert_eq!(report.ratings_jsonl.iter().filter(|b| **b == b'\n').count(), 300);
}

#[tokio::test]
async fn torn_tail_is_dropped_and_corruption_rejected() {
    let f = Fixture::new(1, 1);
    let app = f.app();
    let (cookie, session) = login(&app, f.exp(), "alice").await;
    let trial = session["next_trial"].as_str().unwrap();
    let body = json!({"trial_id": trial, "stars": 5, "reaction_time_ms": 900.0});
    send(&app, "POST", "/api/response", Some(body), &[("cookie", cookie)]).await;
    drop(app);

    let log = f.log_path();
    let good = std::fs::read(&log).unwrap();
    let mut torn = good.clone();
    torn.extend_from_slice(br#"{"event":"response","participant":"alice","trial_id":"t0"#);
    std::fs::write(&log, &torn).unwrap();
    let app = f.app();
    assert_eq!(std::fs::read(&log).unwrap(), good);
    let uri = format!("/api/experiment/{}/export", f.exp());
    let (_, export, _) = send(&app, "GET", &uri, None, &[(AUTHORIZATION.as_str(), format!("Bearer {TOKEN}"))]).await;
    assert_eq!(export.iter().filter(|b| **b == b'\n').count(), 1);
    drop(app);

    let mut corrupt = b"not json\n".to_vec();
    corrupt.extend_from_slice(&good);
    std::fs::write(&log, &corrupt).unwrap();
    let config = ServiceConfig { seed: 42, data_dir: f.root.join("log"), export_token: None };
    let err = AppState::new(vec![f.loaded()], &config, Arc::new(SteppingClock::new(Utc::now(), 1))).err().unwrap();
    assert!(err.to_string().contains(":1:"), "{err}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writers_are_serialized() {
    let f = Fixture::new(1, 1);
    let app = f.app();
    let mut handles = Vec::new();
    for p in 0..6 {
        let app = app.clone();
        let exp = f.exp().to_string();
        let trials: Vec<String> = f.replica.manifest.trials.iter().map(|t| t.trial_id.clone()).collect();
        handles.push(tokio::spawn(async move {
            let (cookie, _) = login(&app, &exp, &format!("p{p}")).await;
            for t in trials {
                let body = json!({"trial_id": t, "stars": 1 + p % 6, "reaction_time_ms": 100.0});
                let (status, _, _) = send(&app, "POST", "/api/response", Some(body), &[("cookie", cookie.clone())]).await;
                assert_eq!(status, StatusCode::OK);
            }
        }));
    }
    for h in handles {
        h.await.unwrap();
    }
    assert_eq!(line_count(&f.log_path()), 6 + 6 * 24);
    let uri = format!("/api/experiment/{}/export", f.exp());
    let (_, export, _) = send(&app, "GET", &uri, None, &[(AUTHORIZATION.as_str(), format!("Bearer {TOKEN}"))]).await;
    assert_eq!(export.iter().filter(|b| **b == b'\n').count(), 6 * 24);
}
