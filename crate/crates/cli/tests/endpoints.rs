use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use metacdn::dns::wire::{build_query, Message, RData, TYPE_A};
use metacdn::model::Timestamp;
use metacdn::config::ServiceConfig;
use metacdn_cli::service::Service;
use serde_json::json;
use tower::ServiceExt;

const CONFIG: &str = r#"{
    "zone": "cdx.metacdn.test",
    "platforms": [
        {"alias": "cdnA", "kind": "cdn", "target": {"cname": "gw.cdna.test"}, "answer_ttl_s": 60},
        {"alias": "origin", "kind": "origin", "target": {"addresses": ["198.51.100.7"]}, "answer_ttl_s": 300}
    ],
    "customers": {
        "446b": {
            "0004": {"policy": {"kind": "static"}, "candidates": ["cdnA"], "cname_ttl_s": 20},
            "0005": {"policy": {"kind": "static"}, "candidates": ["origin"], "cname_ttl_s": 300}
        }
    },
    "radar": {"window": 60, "min_samples": 3},
    "probes": {
        "targets": [
            {"platform": "cdnA", "kinds": ["latency", "throughput"], "base_url": "http://probe.cdna.test"},
            {"platform": "origin", "kinds": ["latency"], "owner": "1111", "base_url": "http://origin.test/"}
        ],
        "community": ["446b"]
    }
}"#;

fn service(clock: Arc<AtomicU64>) -> Arc<Service> {
    let cfg = ServiceConfig::parse(CONFIG, "test").unwrap();
    Arc::new(Service::build(&cfg, Arc::new(move || Timestamp::from_millis(clock.load(Ordering::SeqCst)))).unwrap())
}

async fn call(svc: &Arc<Service>, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = metacdn_cli::http::router(svc.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

#[tokio::test]
async fn probe_objects_have_fixed_sizes() {
    let svc = service(Arc::new(AtomicU64::new(0)));
    let (s, body) = call(&svc, get("/probe/latency")).await;
    assert_eq!((s, body.len()), (StatusCode::OK, 43));
    let (s, body) = call(&svc, get("/probe/throughput")).await;
    assert_eq!((s, body.len()), (StatusCode::OK, 100_000));
}

#[tokio::test]
async fn instructions_follow_probe_config() {
    let svc = service(Arc::new(AtomicU64::new(0)));
    let (s, body) = call(&svc, get("/radar/instructions?customer=446B&asn=64500&country=DE")).await;
    assert_eq!(s, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!(list[0]["url"], "http://probe.cdna.test/probe/latency");
    assert_eq!(list[0]["delay_ms"], 2000);
    let (s, _) = call(&svc, get("/radar/instructions?customer=zz")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (_, body) = call(&svc, get("/radar/instructions?customer=1111")).await;
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&body).unwrap().as_array().unwrap().len(), 1);
}

fn report(asn: u32, value: f64, t: u64) -> Request<Body> {
    let body = json!({
        "platform": "cdnA", "metric": "latency_ms", "value": value, "timestamp": t,
        "client": {"resolver_ip": "192.0.2.53", "asn": asn, "country": "DE"}
    });
    Request::post("/radar/report")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn reports_feed_radar_and_events() {
    let clock = Arc::new(AtomicU64::new(0));
    let svc = service(clock.clone());
    let (s, _) = call(&svc, report(64500, -3.0, 1000)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&svc, get("/radar/report")).await;
    assert_eq!(s, StatusCode::METHOD_NOT_ALLOWED);

    // 30 min of 20 ms baseline from 6 ASes, then 10 min at 80 ms.
    let mut t = 0;
    while t < 40 * 60_000 {
        let v = if t < 30 * 60_000 { 20.0 } else { 80.0 };
        for asn in 64500..64506 {
            let (s, _) = call(&svc, report(asn, v, t)).await;
            assert_eq!(s, StatusCode::ACCEPTED);
        }
        t += 10_000;
    }
    assert_eq!(svc.radar.accepted(), 6 * 240);
    clock.store(t, Ordering::SeqCst);
    let (s, body) = call(&svc, get("/events?since=0")).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    let events: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events.len(), 1, "{text}");
    assert_eq!(events[0]["subject"], "cdnA");
    assert_eq!(events[0]["status"], "confirmed");
    let (_, body) = call(&svc, get(&format!("/events?since={}", t + 1))).await;
    assert!(body.is_empty());
}

#[tokio::test]
async fn fusion_reload_endpoint() {
    let svc = service(Arc::new(AtomicU64::new(0)));
    let dir = tempfile::tempdir().unwrap();
    let feed = dir.path().join("feed.jsonl");
    std::fs::write(&feed, "{\"platform\":\"cdnA\",\"metric\":\"quota_used\",\"value\":10,\"as_of\":0}\n").unwrap();
    let req = Request::post("/fusion/reload")
        .body(Body::from(json!({ "path": feed }).to_string()))
        .unwrap();
    let (s, body) = call(&svc, req).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    assert_eq!(svc.fusion.snapshot().len(), 1);
    let req = Request::post("/fusion/reload")
        .body(Body::from(json!({ "path": dir.path().join("missing") }).to_string()))
        .unwrap();
    let (s, _) = call(&svc, req).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(svc.fusion.snapshot().len(), 1);
}

#[tokio::test]
async fn udp_round_trip() {
    let svc = service(Arc::new(AtomicU64::new(0)));
    let socket = tokio::net::UdpSocket::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = socket.local_addr().unwrap();
    tokio::spawn(metacdn_cli::udp::serve(socket, svc));

    let client = tokio::net::UdpSocket::bind("127.0.0.1:0").await.unwrap();
    client
        .send_to(&build_query(7, "2-01-446b-0004.cdx.metacdn.test", TYPE_A, None), addr)
        .await
        .unwrap();
    let mut buf = [0u8; 512];
    let (n, _) = tokio::time::timeout(std::time::Duration::from_secs(5), client.recv_from(&mut buf))
        .await
        .unwrap()
        .unwrap();
    let m = Message::parse(&buf[..n]).unwrap();
    assert_eq!(m.header.id, 7);
    assert_eq!(m.answers[0].ttl, 20);
    assert_eq!(m.answers[0].data, RData::Cname("gw.cdna.test".into()));
}
