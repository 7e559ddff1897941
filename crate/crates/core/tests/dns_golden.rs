//! Byte-for-byte comparison with responses produced by dnspython
//! (see `golden/gen_dns_vectors.py`).

use std::collections::BTreeMap;
use std::net::SocketAddrV4;
use std::sync::Arc;

use metacdn::dns::{DnsEdge, EdgeConfig, GeoTable};
use metacdn::fusion::{FusionStore, FusionView};
use metacdn::model::{AppConfig, Platform, PlatformKind, PolicyKind, PolicySpec, Target, Timestamp};
use metacdn::openmix::{Openmix, OpenmixConfig, StatsView};

fn vectors() -> BTreeMap<String, (Vec<u8>, Vec<u8>)> {
    let raw = include_str!("golden/dns_vectors.json");
    let doc: serde_json::Value = serde_json::from_str(raw).unwrap();
    doc["vectors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| {
            let get = |k: &str| hex::decode(v[k].as_str().unwrap()).unwrap();
            (v["name"].as_str().unwrap().to_string(), (get("query"), get("response")))
        })
        .collect()
}

fn edge() -> DnsEdge {
    let app = |a: &str, platform: &str, ttl| AppConfig {
        customer: "446b".parse().unwrap(),
        app: a.parse().unwrap(),
        policy: PolicySpec::simple(PolicyKind::Static),
        candidates: vec![platform.to_string()],
        cname_ttl_s: ttl,
    };
    let cfg = EdgeConfig::new(
        "cdx.metacdn.test",
        [
            Platform {
                alias: "cdnA".into(),
                kind: PlatformKind::Cdn,
                target: Target::Cname("gw.cdna.test".into()),
                answer_ttl_s: 60,
            },
            Platform {
                alias: "origin".into(),
                kind: PlatformKind::Origin,
                target: Target::Addresses(vec!["198.51.100.7".parse().unwrap()]),
                answer_ttl_s: 300,
            },
        ],
        [app("0004", "cdnA", 20), app("0005", "origin", 300)],
    )
    .unwrap();
    DnsEdge::new(
        cfg,
        GeoTable::default(),
        Openmix::new(OpenmixConfig::default()),
        Arc::new(Arc::new(StatsView::new(Timestamp::ZERO))),
        Arc::new(FusionStore::new(FusionView::default())),
    )
}

fn check(name: &str) {
    let all = vectors();
    let (query, expected) = &all[name];
    let src: SocketAddrV4 = "192.0.2.53:40000".parse().unwrap();
    let got = edge().handle_query(query, src, Timestamp::from_secs(1));
    assert_eq!(hex::encode(&got), hex::encode(expected), "vector {name}");
}

#[test]
fn cname_answer_ttl_20() {
    check("cname_ttl20");
}

#[test]
fn a_answer() {
    check("a_answer");
}

#[test]
fn nxdomain_with_soa() {
    check("nxdomain");
}

#[test]
fn ecs_is_echoed_with_scope_24() {
    check("ecs_echo");
}

#[test]
fn edns_without_ecs() {
    check("edns_without_ecs");
}
