//! Radar, event feed and admin endpoints.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use metacdn::model::{CustomerId, ProbeReport, Timestamp};
use metacdn::radar::{issue_instructions, serve_probe_object};
use metacdn::sentinel::feed_jsonl;

use crate::service::Service;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/radar/instructions", get(instructions))
        .route("/probe/latency", get(|| async { probe_object("latency") }))
        .route("/probe/throughput", get(|| async { probe_object("throughput") }))
        .route("/radar/report", post(report))
        .route("/events", get(events))
        .route("/fusion/reload", post(reload_fusion))
        .with_state(service)
}

fn bad_request(msg: impl ToString) -> Response {
    (StatusCode::BAD_REQUEST, msg.to_string()).into_response()
}

#[derive(Deserialize)]
struct InstructionQuery {
    customer: String,
    // accepted for compatibility with the beacon; targeting ignores them
    #[allow(dead_code)]
    asn: Option<u32>,
    #[allow(dead_code)]
    country: Option<String>,
}

async fn instructions(State(svc): State<Arc<Service>>, Query(q): Query<InstructionQuery>) -> Response {
    match q.customer.parse::<CustomerId>() {
        Ok(c) => Json(issue_instructions(c, &svc.probes)).into_response(),
        Err(e) => bad_request(e),
    }
}

fn probe_object(kind: &str) -> Response {
    let obj = serve_probe_object(kind).expect("both objects exist");
    let mut resp = obj.body.into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static(obj.content_type));
    for (k, v) in obj.headers {
        headers.insert(HeaderName::from_static(k), HeaderValue::from_static(v));
    }
    resp
}

async fn report(State(svc): State<Arc<Service>>, body: axum::body::Bytes) -> Response {
    let report: ProbeReport = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(e),
    };
    match svc.radar.ingest_report(report) {
        Ok(()) => StatusCode::ACCEPTED.into_response(),
        Err(e) => bad_request(e),
    }
}

#[derive(Deserialize)]
struct EventsQuery {
    /// Milliseconds since the epoch.
    since: Option<u64>,
}

async fn events(State(svc): State<Arc<Service>>, Query(q): Query<EventsQuery>) -> Response {
    let now = svc.now();
    let feed = {
        let mut s = svc.sentinel.lock().expect("sentinel lock poisoned");
        s.tick(now);
        s.emit_feed(Timestamp::from_millis(q.since.unwrap_or(0)))
    };
    ([(header::CONTENT_TYPE, "application/x-ndjson")], feed_jsonl(&feed)).into_response()
}

#[derive(Deserialize, Default)]
struct ReloadBody {
    path: Option<PathBuf>,
}

async fn reload_fusion(State(svc): State<Arc<Service>>, body: axum::body::Bytes) -> Response {
    let req: ReloadBody = if body.is_empty() {
        ReloadBody::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(b) => b,
            Err(e) => return bad_request(e),
        }
    };
    match svc.reload_fusion(req.path) {
        Ok(n) => Json(serde_json::json!({ "records": n })).into_response(),
        Err(e) => (StatusCode::UNPROCESSABLE_ENTITY, e.to_string()).into_response(),
    }
}
