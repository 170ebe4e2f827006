//! In-process synthetic raters: replays a [`RatingPlan`] through the HTTP
//! router exactly as a browser client would, including a mid-session
//! reload and idempotent resends, then pulls the operator export.

use std::collections::HashMap;

use axum::body::{to_bytes, Body};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE, COOKIE};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use thiserror::Error;
use tower::ServiceExt;

use segrate_core::experiment::SurveyPhase;
use segrate_core::replica::RatingPlan;
use segrate_core::seed::{derive_seed, seeded_rng};

use crate::api::{SessionManifest, SessionReply, SESSION_COOKIE};
use crate::clock::format_timestamp;

/// Inter-trial intervals a client may draw from, in ms.
pub const ITI_MS: [u64; 4] = [125, 250, 500, 750];

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("{method} {uri}: HTTP {status}: {body}")]
    Http { method: Method, uri: String, status: StatusCode, body: String },
    #[error("{0}")]
    Protocol(String),
}

#[derive(Debug, Clone)]
pub struct DriverOptions {
    pub seed: u64,
    /// Client clock of the first participant; later ones start a day apart.
    pub start: DateTime<Utc>,
    pub export_token: String,
    /// Reload (new session call + manifest fetch) after this many trials.
    pub reload_after: Option<usize>,
    /// Resend every n-th response to exercise idempotency.
    pub resend_every: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct DriverReport {
    pub participants: usize,
    pub responses: usize,
    pub duplicates_acknowledged: usize,
    pub resumes: usize,
    pub itis_ms: Vec<u64>,
    pub ratings_jsonl: Vec<u8>,
    pub survey_jsonl: Vec<u8>,
}

struct Client {
    app: Router,
    cookie: Option<String>,
}

impl Client {
    async fn call(&self, method: Method, uri: &str, body: Option<Value>, auth: Option<&str>) -> Result<(StatusCode, Vec<u8>), DriverError> {
        let mut req = Request::builder().method(method.clone()).uri(uri);
        if let Some(c) = &self.cookie {
            req = req.header(COOKIE, c);
        }
        if let Some(t) = auth {
            req = req.header(AUTHORIZATION, format!("Bearer {t}"));
        }
        let req = match body {
            Some(v) => req.header(CONTENT_TYPE, "application/json").body(Body::from(v.to_string())),
            None => req.body(Body::empty()),
        }
        .map_err(|e| DriverError::Protocol(e.to_string()))?;
        let resp = self.app.clone().oneshot(req).await.map_err(|e| DriverError::Protocol(e.to_string()))?;
        let status = resp.status();
        let bytes = to_bytes(resp.into_body(), usize::MAX)
            .await
            .map_err(|e| DriverError::Protocol(e.to_string()))?
            .to_vec();
        if !status.is_success() {
            let body = String::from_utf8_lossy(&bytes).into_owned();
            return Err(DriverError::Http { method, uri: uri.to_string(), status, body });
        }
        Ok((status, bytes))
    }

    async fn json<T: DeserializeOwned>(&self, method: Method, uri: &str, body: Option<Value>) -> Result<T, DriverError> {
        let (_, bytes) = self.call(method, uri, body, None).await?;
        serde_json::from_slice(&bytes).map_err(|e| DriverError::Protocol(format!("{uri}: {e}")))
    }
}

async fn open_session(client: &mut Client, experiment: &str, participant: &str) -> Result<SessionReply, DriverError> {
    client.cookie = None;
    let body = json!({ "experiment_id": experiment, "participant": participant });
    let reply: SessionReply = client.json(Method::POST, "/api/session", Some(body)).await?;
    client.cookie = Some(format!("{SESSION_COOKIE}={}", reply.token));
    Ok(reply)
}

/// Run every planned participant through consent, surveys and all trials,
/// then export ratings and surveys with the operator token.
pub async fn drive(app: Router, plan: &RatingPlan, opts: &DriverOptions) -> Result<DriverReport, DriverError> {
    let exp = plan.experiment_id.as_str();
    let manifest_uri = format!("/api/experiment/{exp}/manifest");
    let mut report = DriverReport::default();
    let mut client = Client { app, cookie: None };
    for (k, p) in plan.participants.iter().enumerate() {
        let mut rng = seeded_rng(derive_seed(opts.seed, &format!("driver/{exp}/{}", p.id)));
        let mut clock = opts.start + Duration::days(k as i64);
        let planned: HashMap<&str, _> = p.responses.iter().map(|r| (r.trial_id.as_str(), r)).collect();

        open_session(&mut client, exp, &p.id).await?;
        let mut view: SessionManifest = client.json(Method::GET, &manifest_uri, None).await?;
        if !view.surveys_done.contains(&SurveyPhase::Pre) {
            let body = json!({ "phase": "pre", "answers": p.pre_survey });
            client.call(Method::POST, "/api/survey", Some(body), None).await?;
        }
        let mut done = view.answered;
        while let Some(trial_id) = view.next_trial.clone() {
            let r = planned
                .get(trial_id.as_str())
                .ok_or_else(|| DriverError::Protocol(format!("no planned response for '{trial_id}'")))?;
            let iti = ITI_MS[rng.random_range(0..ITI_MS.len())];
            report.itis_ms.push(iti);
            clock += Duration::milliseconds((iti as f64 + r.reaction_time_ms).round() as i64);
            let body = json!({
                "trial_id": r.trial_id,
                "stars": r.stars,
                "reaction_time_ms": r.reaction_time_ms,
                "toggle_count": r.toggle_count,
                "client_timestamp": format_timestamp(clock),
            });
            let (_, ack) = client.call(Method::POST, "/api/response", Some(body.clone()), None).await?;
            let ack: Value = serde_json::from_slice(&ack).map_err(|e| DriverError::Protocol(e.to_string()))?;
            if ack["duplicate"] == json!(true) {
                report.duplicates_acknowledged += 1;
            } else {
                report.responses += 1;
            }
            done += 1;
            if opts.resend_every.is_some_and(|n| n > 0 && done.is_multiple_of(n)) {
                let (_, again) = client.call(Method::POST, "/api/response", Some(body), None).await?;
                let again: Value = serde_json::from_slice(&again).map_err(|e| DriverError::Protocol(e.to_string()))?;
                if again["server_timestamp"] != ack["server_timestamp"] || again["duplicate"] != json!(true) {
                    return Err(DriverError::Protocol(format!("resend of '{trial_id}' was not idempotent")));
                }
                report.duplicates_acknowledged += 1;
            }
            if opts.reload_after == Some(done) {
                let reply = open_session(&mut client, exp, &p.id).await?;
                if reply.created || reply.answered != done {
                    return Err(DriverError::Protocol(format!("reload of '{}' did not resume", p.id)));
                }
                report.resumes += 1;
            }
            view = client.json(Method::GET, &manifest_uri, None).await?;
            if view.answered != done {
                return Err(DriverError::Protocol(format!("'{}': {} answered, expected {done}", p.id, view.answered)));
            }
        }
        if !view.surveys_done.contains(&SurveyPhase::Post) {
            let body = json!({ "phase": "post", "answers": p.post_survey });
            client.call(Method::POST, "/api/survey", Some(body), None).await?;
        }
        report.participants += 1;
    }
    client.cookie = None;
    let token = Some(opts.export_token.as_str());
    report.ratings_jsonl = client.call(Method::GET, &format!("/api/experiment/{exp}/export"), None, token).await?.1;
    report.survey_jsonl = client
        .call(Method::GET, &format!("/api/experiment/{exp}/export?kind=survey"), None, token)
        .await?
        .1;
    Ok(report)
}
